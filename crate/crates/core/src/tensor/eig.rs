//! Cyclic Jacobi eigensolver for dense Hermitian matrices.

use num_complex::Complex64;

use super::{ComplexMatrix, TensorError};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a Hermitian matrix M = V diag(λ) V*.
///
/// Eigenvalues are returned sorted ascending with eigenvector columns
/// permuted to match. The off-diagonal Frobenius norm is driven below
/// `tol` relative to ‖M‖_F; `tol` is also the absolute entrywise bound
/// for the Hermiticity check.
pub fn hermitian_eig(
    m: &ComplexMatrix,
    tol: f64,
) -> Result<(Vec<f64>, ComplexMatrix), TensorError> {
    if !m.is_square() {
        return Err(TensorError::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    // entrywise deviation from M* counts the diagonal imaginary part too
    if dev > 2.0 * tol {
        return Err(TensorError::NotHermitian(dev));
    }

    let mut a = m.clone();
    // symmetrize so rotations see an exactly Hermitian matrix
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
    let mut v = ComplexMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let thresh = tol * scale;

    let mut converged = n <= 1;
    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) < thresh {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) >= thresh {
        return Err(TensorError::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.partial_cmp(&a[(j, j)].re).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut vecs = ComplexMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs[(row, col)] = v[(row, src)];
        }
    }
    Ok((eigenvalues, vecs))
}

fn off_diagonal_norm(a: &ComplexMatrix) -> f64 {
    let n = a.rows;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// One two-sided unitary rotation zeroing the (p, q) entry.
fn rotate(a: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let alpha = a[(p, q)];
    let mag = alpha.norm();
    if mag == 0.0 {
        return;
    }
    let phase = alpha / mag; // e^{i phi}
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let tau = (app - aqq) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let n = a.rows;
    // columns: (M J) with J_pp = c, J_pq = -s*phase, J_qp = s*conj(phase), J_qq = c
    for i in 0..n {
        let aip = a[(i, p)];
        let aiq = a[(i, q)];
        a[(i, p)] = aip * c + aiq * s * phase.conj();
        a[(i, q)] = -aip * s * phase + aiq * c;
    }
    // rows: (J^H M)
    for j in 0..n {
        let apj = a[(p, j)];
        let aqj = a[(q, j)];
        a[(p, j)] = apj * c + aqj * s * phase;
        a[(q, j)] = -apj * s * phase.conj() + aqj * c;
    }
    a[(p, q)] = Complex64::new(0.0, 0.0);
    a[(q, p)] = Complex64::new(0.0, 0.0);
    a[(p, p)] = Complex64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = Complex64::new(a[(q, q)].re, 0.0);

    for i in 0..n {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = vip * c + viq * s * phase.conj();
        v[(i, q)] = -vip * s * phase + viq * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn reconstruction_residual(m: &ComplexMatrix, lam: &[f64], v: &ComplexMatrix) -> f64 {
        let diag: Vec<Complex64> = lam.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let rebuilt = v
            .matmul(&ComplexMatrix::from_diag(&diag))
            .matmul(&v.adjoint());
        m.sub(&rebuilt).frobenius_norm() / m.frobenius_norm().max(1e-300)
    }

    #[test]
    fn already_diagonal() {
        let m = ComplexMatrix::from_diag(&[Complex64::new(3.0, 0.0), Complex64::new(1.0, 0.0)]);
        let (lam, v) = hermitian_eig(&m, 1e-12).unwrap();
        assert_eq!(lam, vec![1.0, 3.0]);
        // permuted identity
        assert!((v[(0, 1)].norm() - 1.0).abs() < 1e-12);
        assert!((v[(1, 0)].norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_flip() {
        // [[0,1],[1,0]] has eigenvalues -1, +1 (roots of l^2 - 1)
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 1)] = Complex64::new(1.0, 0.0);
        m[(1, 0)] = Complex64::new(1.0, 0.0);
        let (lam, _) = hermitian_eig(&m, 1e-12).unwrap();
        assert!((lam[0] + 1.0).abs() < 1e-12);
        assert!((lam[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn i_times_skew_symmetric() {
        // i*[[0,a],[-a,0]] is Hermitian with spectrum -a, +a
        let a = 2.5;
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 1)] = Complex64::new(0.0, a);
        m[(1, 0)] = Complex64::new(0.0, -a);
        let (lam, v) = hermitian_eig(&m, 1e-12).unwrap();
        assert!((lam[0] + a).abs() < 1e-10);
        assert!((lam[1] - a).abs() < 1e-10);
        assert!(reconstruction_residual(&m, &lam, &v) < 1e-10);
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 1)] = Complex64::new(1.0, 0.0);
        m[(1, 0)] = Complex64::new(2.0, 0.0);
        assert!(matches!(
            hermitian_eig(&m, 1e-10),
            Err(TensorError::NotHermitian(_))
        ));
    }

    #[test]
    fn random_hermitian_reconstruction() {
        let mut rng = StdRng::seed_from_u64(7);
        for &n in &[4usize, 16, 64, 128] {
            let mut m = ComplexMatrix::zeros(n, n);
            for i in 0..n {
                m[(i, i)] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
                for j in (i + 1)..n {
                    let z = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    m[(i, j)] = z;
                    m[(j, i)] = z.conj();
                }
            }
            let (lam, v) = hermitian_eig(&m, 1e-11).unwrap();
            assert!(
                reconstruction_residual(&m, &lam, &v) < 1e-9,
                "residual too large at n={n}"
            );
            let unit = v.adjoint().matmul(&v).sub(&ComplexMatrix::identity(n));
            assert!(unit.frobenius_norm() < 1e-10, "V not unitary at n={n}");
            // M V = V diag(lam)
            let diag: Vec<Complex64> = lam.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            let lhs = m.matmul(&v);
            let rhs = v.matmul(&ComplexMatrix::from_diag(&diag));
            assert!(lhs.sub(&rhs).frobenius_norm() <= 1e-9 * m.frobenius_norm());
        }
    }
}
