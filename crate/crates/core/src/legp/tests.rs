use super::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn single_point_rule() {
    let (nodes, weights) = gauss_legendre(1).unwrap();
    assert!(nodes[0].abs() < 1e-15);
    assert!((weights[0] - 2.0).abs() < 1e-15);
}

#[test]
fn two_point_rule() {
    let (nodes, weights) = gauss_legendre(2).unwrap();
    let r = 1.0 / 3.0f64.sqrt();
    assert!((nodes[0] + r).abs() < 1e-12);
    assert!((nodes[1] - r).abs() < 1e-12);
    assert!((weights[0] - 1.0).abs() < 1e-12);
    assert!((weights[1] - 1.0).abs() < 1e-12);
}

#[test]
fn exactness_degree_five() {
    // int_{-1}^{1} x^4 dx = 0.4 with the 3-point rule
    let (nodes, weights) = gauss_legendre(3).unwrap();
    let acc: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| w * x.powi(4))
        .sum();
    assert!((acc - 0.4).abs() < 1e-13);
}

#[test]
fn exactness_up_to_2k_minus_1() {
    for &k in &[4usize, 8, 16, 32, 64] {
        let (nodes, weights) = gauss_legendre(k).unwrap();
        for deg in 0..(2 * k) {
            let acc: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * x.powi(deg as i32))
                .sum();
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            assert!(
                (acc - exact).abs() < 1e-12,
                "k={k} deg={deg}: {acc} vs {exact}"
            );
        }
    }
}

#[test]
fn two_scale_k1_halves() {
    let ops = build_two_scale(1).unwrap();
    let v = 1.0 / std::f64::consts::SQRT_2;
    assert!((ops.h_left[(0, 0)] - v).abs() < 1e-12);
    assert!((ops.h_right[(0, 0)] - v).abs() < 1e-12);
}

#[test]
fn constants_live_at_every_scale() {
    // a constant's coarse coefficients split and re-merge exactly
    let ops = build_two_scale(3).unwrap();
    let coarse = vec![1.0, 0.0, 0.0];
    let (even, odd) = ops.down(&coarse);
    let merged = ops.up(&even, &odd);
    for (m, c) in merged.iter().zip(&coarse) {
        assert!((m - c).abs() < 1e-12);
    }
}

#[test]
fn projection_identity_random_coarse() {
    let mut rng = StdRng::seed_from_u64(31);
    for &k in &[1usize, 2, 4, 8, 16] {
        let ops = build_two_scale(k).unwrap();
        for _ in 0..20 {
            let c: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (even, odd) = ops.down(&c);
            let merged = ops.up(&even, &odd);
            for (m, v) in merged.iter().zip(&c) {
                assert!((m - v).abs() < 1e-10, "k={k}");
            }
        }
    }
}

#[test]
fn legp_block_zero_scales_is_identity() {
    let ops = build_two_scale(2).unwrap();
    let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    assert_eq!(legp_block(&x, 4, &ops, 0), x);
}

#[test]
fn legp_block_preserves_length() {
    let mut rng = StdRng::seed_from_u64(32);
    let ops = build_two_scale(3).unwrap();
    for &len in &[2usize, 5, 8, 16, 31] {
        let x: Vec<f64> = (0..len * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = legp_block(&x, len, &ops, 3);
        assert_eq!(out.len(), len * 3);
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn smooth_input_energy_concentrates_coarse() {
    // linear-ramp coefficients lie in the coarse space, so merging keeps
    // their energy: ratio coarse/fine stays above 0.8
    let k = 3;
    let ops = build_two_scale(k).unwrap();
    // fine coefficients of the ramp f(t) = t on [0,1] over two halves
    let (nodes, weights) = gauss_legendre(16).unwrap();
    let coeff = |a: f64, w: f64, j: usize| -> f64 {
        let mut acc = 0.0;
        for (&x, &wt) in nodes.iter().zip(&weights) {
            let t = a + w * (x + 1.0) / 2.0;
            let local = (t - a) / w;
            acc += wt * t * ((2 * j + 1) as f64).sqrt() * crate::hippo::legendre_eval(j, local)
                / 2.0;
        }
        acc
    };
    let even: Vec<f64> = (0..k).map(|j| coeff(0.0, 0.5, j)).collect();
    let odd: Vec<f64> = (0..k).map(|j| coeff(0.5, 0.5, j)).collect();
    let coarse = ops.up(&even, &odd);
    let fine_energy: f64 = even.iter().chain(&odd).map(|v| v * v).sum();
    let coarse_energy: f64 = coarse.iter().map(|v| v * v).sum();
    assert!(coarse_energy / fine_energy > 0.8, "ratio {}", coarse_energy / fine_energy);
}

#[test]
fn lemma_rate_for_sine() {
    // absolute bound 2^{-rk} * 2/(4^k k!) * sup|f^{(k)}| at every scale,
    // and the per-scale ratio <= 2^{-k} * 1.5 once the segments resolve
    // the oscillation (r >= 2; at coarser scales the symmetry of sine
    // makes consecutive errors equal, e.g. k=1 between r=1 and r=2)
    let two_pi = 2.0 * std::f64::consts::PI;
    let f = move |t: f64| (two_pi * t).sin();
    for &k in &[1usize, 2, 3] {
        let factorial: f64 = (1..=k).product::<usize>() as f64;
        let constant = 2.0 / (4f64.powi(k as i32) * factorial) * two_pi.powi(k as i32);
        let errors: Vec<f64> = (0..=5).map(|r| piecewise_projection_error(&f, k, r)).collect();
        for (r, &err) in errors.iter().enumerate() {
            let bound = 2f64.powi(-((r * k) as i32)) * constant;
            assert!(err <= bound, "k={k} r={r}: error {err} > bound {bound}");
        }
        let ratio_bound = 2f64.powi(-(k as i32)) * 1.5;
        for r in 2..5 {
            let ratio = errors[r + 1] / errors[r];
            assert!(ratio <= ratio_bound, "k={k} r={r}: ratio {ratio} > {ratio_bound}");
        }
    }
}

#[test]
fn constant_projects_exactly() {
    let f = |_t: f64| 2.5;
    for r in 0..4 {
        assert!(piecewise_projection_error(&f, 1, r) < 1e-10);
    }
}
