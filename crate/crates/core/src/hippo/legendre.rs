/// Shifted Legendre polynomial P_n(2t - 1) on [0, 1], by the three-term
/// recurrence. Bounded by 1 in magnitude on the interval.
pub fn legendre_eval(n: usize, t: f64) -> f64 {
    assert!(n <= 256, "degree capped at 256");
    let x = 2.0 * t - 1.0;
    if n == 0 {
        return 1.0;
    }
    let mut p_prev = 1.0;
    let mut p = x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
    }
    p
}

/// Derivative of the unshifted P_n at x, used by the quadrature root finder.
pub fn legendre_deriv_unshifted(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p_n = legendre_unshifted(n, x);
    let p_nm1 = legendre_unshifted(n - 1, x);
    // (1 - x^2) P_n'(x) = n (P_{n-1}(x) - x P_n(x))
    n as f64 * (p_nm1 - x * p_n) / (1.0 - x * x)
}

/// P_n on [-1, 1].
pub fn legendre_unshifted(n: usize, x: f64) -> f64 {
    legendre_eval(n, (x + 1.0) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree_zero_is_one() {
        for &t in &[0.0, 0.3, 1.0] {
            assert_eq!(legendre_eval(0, t), 1.0);
        }
    }

    #[test]
    fn degree_one_is_affine() {
        // P_1(x) = x, so at t = 0.75 the shifted value is 0.5
        assert!((legendre_eval(1, 0.75) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bounded_on_interval() {
        for n in 0..=64 {
            for i in 0..=100 {
                let t = i as f64 / 100.0;
                assert!(legendre_eval(n, t).abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn orthogonality_by_quadrature() {
        // brute-force 256-point midpoint rule: int_0^1 P_m P_n dt = delta / (2n+1)
        let q = 256;
        for m in 0..6 {
            for n in 0..6 {
                let mut acc = 0.0;
                for i in 0..q {
                    let t = (i as f64 + 0.5) / q as f64;
                    acc += legendre_eval(m, t) * legendre_eval(n, t) / q as f64;
                }
                let expect = if m == n { 1.0 / (2.0 * n as f64 + 1.0) } else { 0.0 };
                assert!((acc - expect).abs() < 1e-4, "m={m} n={n} got {acc}");
            }
        }
    }
}
