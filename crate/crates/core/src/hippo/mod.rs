//! Orthogonal-polynomial state matrices: scaled / translated / piecewise
//! Legendre families, their normal (skew-symmetric plus low-rank) forms,
//! unitary diagonalizations, and Legendre basis evaluation.

mod legendre;

pub use legendre::{legendre_deriv_unshifted, legendre_eval, legendre_unshifted};

use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::tensor::{hermitian_eig, ComplexMatrix, RealMatrix, TensorError};

#[derive(Debug, Error)]
pub enum HippoError {
    #[error("rank-2 fit of the normal-form residual left error {0:e}")]
    ResidualNotRank2(f64),
    #[error("normal form is not (shifted) skew-symmetric: deviation {0:e}")]
    NotSkewSymmetric(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Basis family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HippoFamily {
    /// Scaled Legendre: full-history measure.
    LegS,
    /// Translated Legendre: sliding-window measure.
    LegT,
    /// Piecewise Legendre: LegT dynamics plus power-of-2 multiscale projection.
    LegP,
    /// Real diagonal initialization diag{-1, -2, ...}.
    S4DReal,
}

#[derive(Debug, Clone, Copy)]
pub struct HippoSpec {
    pub family: HippoFamily,
    pub n_state: usize,
    /// Number of piecewise scales; only meaningful for LegP (0 reduces to LegT).
    pub legp_scales: usize,
}

impl HippoSpec {
    pub fn new(family: HippoFamily, n_state: usize) -> Self {
        Self { family, n_state, legp_scales: 0 }
    }
}

/// Continuous-time system (A, B) with a C initialization.
#[derive(Debug, Clone)]
pub struct DenseSystem {
    pub a: RealMatrix,
    pub b: Vec<f64>,
    pub c_init: Vec<f64>,
}

/// Skew-symmetric (possibly diagonally shifted) part plus the low-rank
/// correction columns that recover the dense A.
#[derive(Debug, Clone)]
pub struct NormalForm {
    pub a_normal: RealMatrix,
    /// N x p correction, p in {1, 2}; dense A = a_normal - low_rank * low_rank^T.
    pub low_rank: RealMatrix,
}

/// Diagonalized system: A_normal = V diag(lambda) V*.
#[derive(Debug, Clone)]
pub struct DiagonalSystem {
    pub lambda: Vec<Complex64>,
    pub v: ComplexMatrix,
}

fn sqrt_odd(n: usize) -> f64 {
    ((2 * n + 1) as f64).sqrt()
}

/// C initialization: unit normal scaled by N^{-1/2}, fixed seed.
fn init_c(n: usize) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(0xC0EF);
    let scale = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|_| {
            // Box-Muller from two uniforms
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

/// Scaled-Legendre system: lower-triangular A with B_n = (2n+1)^{1/2}.
pub fn build_legs(n: usize) -> DenseSystem {
    let mut a = RealMatrix::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            a[(row, col)] = match row.cmp(&col) {
                std::cmp::Ordering::Greater => -sqrt_odd(row) * sqrt_odd(col),
                std::cmp::Ordering::Equal => -((row + 1) as f64),
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    let b = (0..n).map(sqrt_odd).collect();
    DenseSystem { a, b, c_init: init_c(n) }
}

/// Translated-Legendre system with the (-1)^{n-k} upper-triangle sign pattern.
pub fn build_legt(n: usize) -> DenseSystem {
    let mut a = RealMatrix::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let s = sqrt_odd(row) * sqrt_odd(col);
            a[(row, col)] = if col <= row {
                -s
            } else {
                let sign = if (col - row) % 2 == 0 { 1.0 } else { -1.0 };
                -s * sign
            };
        }
    }
    let b = (0..n).map(sqrt_odd).collect();
    DenseSystem { a, b, c_init: init_c(n) }
}

/// Normal form of LegS: A^{(N)} + 1/2 I is exactly skew-symmetric and the
/// rank-1 column P_n = (n + 1/2)^{1/2} satisfies A = A^{(N)} - P P^T.
pub fn build_legs_normal(n: usize) -> NormalForm {
    let mut a_normal = RealMatrix::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            let s = ((row as f64 + 0.5) * (col as f64 + 0.5)).sqrt();
            a_normal[(row, col)] = match row.cmp(&col) {
                std::cmp::Ordering::Greater => -s,
                std::cmp::Ordering::Equal => -0.5,
                std::cmp::Ordering::Less => s,
            };
        }
    }
    let mut low_rank = RealMatrix::zeros(n, 1);
    for row in 0..n {
        low_rank[(row, 0)] = (row as f64 + 0.5).sqrt();
    }
    NormalForm { a_normal, low_rank }
}

/// Normal form of LegT: skew-symmetric with entries on odd index parity,
/// rank-2 correction columns recovered by eigendecomposition of the
/// residual and verified against a 1e-6 acceptance bound.
pub fn build_legt_normal(n: usize) -> Result<NormalForm, HippoError> {
    assert!(n >= 2 && n % 2 == 0, "LegT normal form needs even N >= 2");
    let mut a_normal = RealMatrix::zeros(n, n);
    for row in 0..n {
        for col in 0..n {
            if (row + col) % 2 == 1 {
                let s = sqrt_odd(row) * sqrt_odd(col);
                a_normal[(row, col)] = if row < col { s } else { -s };
            }
        }
    }
    // best rank-2 symmetric fit of the residual A^{(N)} - A
    let residual = a_normal.sub(&build_legt(n).a);
    let (eigenvalues, vectors) = hermitian_eig(&residual.to_complex(), 1e-12)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eigenvalues[j].abs().partial_cmp(&eigenvalues[i].abs()).unwrap());
    let mut low_rank = RealMatrix::zeros(n, 2);
    for (col, &idx) in order.iter().take(2).enumerate() {
        let lam = eigenvalues[idx];
        if lam < 0.0 {
            return Err(HippoError::ResidualNotRank2(lam.abs()));
        }
        let scale = lam.sqrt();
        for row in 0..n {
            low_rank[(row, col)] = vectors[(row, idx)].re * scale;
        }
    }
    let fit = low_rank.matmul(&low_rank.transpose());
    let err = residual.sub(&fit).max_abs();
    if err > 1e-6 {
        return Err(HippoError::ResidualNotRank2(err));
    }
    Ok(NormalForm { a_normal, low_rank })
}

/// Diagonalize a shifted skew-symmetric normal form through the Hermitian
/// eigenproblem of i(A_normal - d I); eigenvalues come back as d - i mu,
/// sorted by imaginary part.
pub fn diagonalize(nf: &NormalForm) -> Result<DiagonalSystem, HippoError> {
    let n = nf.a_normal.rows;
    let d = (0..n).map(|i| nf.a_normal[(i, i)]).sum::<f64>() / n as f64;
    // the shifted matrix must be skew-symmetric
    let mut dev: f64 = 0.0;
    for i in 0..n {
        dev = dev.max((nf.a_normal[(i, i)] - d).abs());
        for j in (i + 1)..n {
            dev = dev.max((nf.a_normal[(i, j)] + nf.a_normal[(j, i)]).abs());
        }
    }
    if dev > 1e-9 {
        return Err(HippoError::NotSkewSymmetric(dev));
    }
    let mut herm = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let s = if i == j { 0.0 } else { nf.a_normal[(i, j)] };
            herm[(i, j)] = Complex64::new(0.0, s);
        }
    }
    let (mu, vectors) = hermitian_eig(&herm, 1e-12)?;
    // lambda = d - i mu; mu ascending means Im(lambda) descending, so flip
    let mut pairs: Vec<usize> = (0..n).collect();
    pairs.sort_by(|&i, &j| (-mu[i]).partial_cmp(&-mu[j]).unwrap());
    let lambda: Vec<Complex64> = pairs.iter().map(|&i| Complex64::new(d, -mu[i])).collect();
    let mut v = ComplexMatrix::zeros(n, n);
    for (col, &src) in pairs.iter().enumerate() {
        for row in 0..n {
            v[(row, col)] = vectors[(row, src)];
        }
    }
    Ok(DiagonalSystem { lambda, v })
}

/// Trainable log-parameterization of the real-diagonal initialization.
#[derive(Debug, Clone)]
pub struct S4dReal {
    pub log_a: Vec<f64>,
}

impl S4dReal {
    pub fn new(n: usize) -> Self {
        Self {
            log_a: (1..=n).map(|k| (k as f64).ln()).collect(),
        }
    }

    /// Realized eigenvalues -exp(log_a); strictly negative for any parameter.
    pub fn lambda(&self) -> Vec<Complex64> {
        self.log_a
            .iter()
            .map(|&l| Complex64::new(-l.exp(), 0.0))
            .collect()
    }
}

pub fn build_s4d_real(n: usize) -> Vec<Complex64> {
    S4dReal::new(n).lambda()
}
