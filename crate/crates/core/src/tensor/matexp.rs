//! Matrix exponential by scaling-and-squaring with a degree-6 Pade core.

use num_complex::Complex64;

use super::{ComplexMatrix, RealMatrix, TensorError};

// Pade [6/6] coefficients for exp(x)
const PADE6: [f64; 7] = [1.0, 0.5, 5.0 / 44.0, 1.0 / 66.0, 1.0 / 792.0, 1.0 / 15840.0, 1.0 / 665280.0];

pub fn matexp(m: &RealMatrix) -> Result<RealMatrix, TensorError> {
    let c = matexp_complex(&m.to_complex())?;
    let data = c.data.iter().map(|z| z.re).collect();
    Ok(RealMatrix { rows: c.rows, cols: c.cols, data })
}

pub fn matexp_complex(m: &ComplexMatrix) -> Result<ComplexMatrix, TensorError> {
    if !m.is_square() {
        return Err(TensorError::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    if n == 0 {
        return Ok(ComplexMatrix::zeros(0, 0));
    }
    // scale so the Pade core sees norm <= 0.5
    let norm = m.frobenius_norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m.scale(Complex64::new(0.5f64.powi(squarings as i32), 0.0));

    // numerator N = sum c_k A^k, denominator D = sum (-1)^k c_k A^k
    let mut num = ComplexMatrix::identity(n).scale(Complex64::new(PADE6[0], 0.0));
    let mut den = num.clone();
    let mut power = ComplexMatrix::identity(n);
    for (k, &c) in PADE6.iter().enumerate().skip(1) {
        power = power.matmul(&scaled);
        let term = power.scale(Complex64::new(c, 0.0));
        num = num.add(&term);
        if k % 2 == 0 {
            den = den.add(&term);
        } else {
            den = den.sub(&term);
        }
    }
    let mut result = solve(&den, &num)?;
    for _ in 0..squarings {
        result = result.matmul(&result);
    }
    Ok(result)
}

/// Solve D X = N by Gaussian elimination with partial pivoting.
fn solve(d: &ComplexMatrix, nmat: &ComplexMatrix) -> Result<ComplexMatrix, TensorError> {
    let n = d.rows;
    let mut a = d.clone();
    let mut x = nmat.clone();
    for col in 0..n {
        let mut pivot = col;
        let mut best = a[(col, col)].norm();
        for r in (col + 1)..n {
            let mag = a[(r, col)].norm();
            if mag > best {
                best = mag;
                pivot = r;
            }
        }
        if best == 0.0 {
            return Err(TensorError::DimMismatch("singular Pade denominator".into()));
        }
        if pivot != col {
            for j in 0..n {
                a.data.swap(col * n + j, pivot * n + j);
                x.data.swap(col * n + j, pivot * n + j);
            }
        }
        let inv = Complex64::new(1.0, 0.0) / a[(col, col)];
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)] * inv;
            if factor.norm_sqr() == 0.0 {
                continue;
            }
            for j in col..n {
                let v = a[(col, j)];
                a[(r, j)] -= factor * v;
            }
            for j in 0..n {
                let v = x[(col, j)];
                x[(r, j)] -= factor * v;
            }
        }
    }
    for r in 0..n {
        let inv = Complex64::new(1.0, 0.0) / a[(r, r)];
        for j in 0..n {
            x[(r, j)] *= inv;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_zero_is_identity() {
        let m = RealMatrix::zeros(3, 3);
        let e = matexp(&m).unwrap();
        assert!(e.sub(&RealMatrix::identity(3)).max_abs() < 1e-14);
    }

    #[test]
    fn exp_of_diagonal() {
        let mut m = RealMatrix::zeros(1, 1);
        m[(0, 0)] = -0.1;
        let e = matexp(&m).unwrap();
        assert!((e[(0, 0)] - 0.904837418035960).abs() < 1e-12);
    }

    #[test]
    fn exp_of_nilpotent() {
        // [[0,1],[0,0]] -> series terminates at I + M
        let mut m = RealMatrix::zeros(2, 2);
        m[(0, 1)] = 1.0;
        let e = matexp(&m).unwrap();
        let expect = RealMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert!(e.sub(&expect).max_abs() < 1e-13);
    }

    #[test]
    fn semigroup_property() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 6;
            let mut m = RealMatrix::zeros(n, n);
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
            let e1 = matexp(&m).unwrap();
            let e2 = matexp(&m.scale(2.0)).unwrap();
            let rel = e1.matmul(&e1).sub(&e2).frobenius_norm() / e2.frobenius_norm();
            assert!(rel < 1e-9, "semigroup violated: {rel}");
        }
    }

    #[test]
    fn large_norm_accuracy() {
        // exp(diag(-50, 2)) against scalar exponentials
        let m = RealMatrix::from_rows(&[vec![-50.0, 0.0], vec![0.0, 2.0]]);
        let e = matexp(&m).unwrap();
        assert!((e[(0, 0)] - (-50.0f64).exp()).abs() <= 1e-10 * (-50.0f64).exp().max(1e-300));
        assert!((e[(1, 1)] - 2.0f64.exp()).abs() <= 1e-10 * 2.0f64.exp());
    }
}
