//! Piecewise two-scale Legendre machinery: Gauss-Legendre quadrature,
//! coarse/fine projection operators with their pseudo-inverses, and the
//! multiscale block applied to state trajectories.

use thiserror::Error;

use crate::hippo::{legendre_deriv_unshifted, legendre_eval, legendre_unshifted};
use crate::tensor::RealMatrix;

#[derive(Debug, Error)]
pub enum LegpError {
    #[error("Newton iteration for quadrature nodes did not converge")]
    NoConvergence,
    #[error("two-scale operators ill-conditioned: reconstruction residual {0:e}")]
    IllConditioned(f64),
}

/// Gauss-Legendre nodes and weights on [-1, 1]; exact for polynomials of
/// degree <= 2k - 1. Nodes found by Newton iteration from Chebyshev
/// initial guesses.
pub fn gauss_legendre(k: usize) -> Result<(Vec<f64>, Vec<f64>), LegpError> {
    assert!((1..=64).contains(&k), "quadrature order limited to 1..=64");
    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..k {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        let mut converged = false;
        for _ in 0..100 {
            let p = legendre_unshifted(k, x);
            let dp = legendre_deriv_unshifted(k, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(LegpError::NoConvergence);
        }
        let dp = legendre_deriv_unshifted(k, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Chebyshev guesses walk from +1 to -1; return ascending
    nodes.reverse();
    weights.reverse();
    Ok((nodes, weights))
}

/// Coarse-from-fine half-interval operators H and their transpose-based
/// pseudo-inverses. Bases are L2-orthonormal shifted Legendre polynomials,
/// so the stacked operator [H_left H_right] has orthonormal rows and the
/// Moore-Penrose inverse is the transpose.
#[derive(Debug, Clone)]
pub struct TwoScaleOperators {
    pub k: usize,
    pub h_left: RealMatrix,
    pub h_right: RealMatrix,
    pub hd_left: RealMatrix,
    pub hd_right: RealMatrix,
    pub trainable: bool,
}

/// Orthonormal Legendre basis element of degree `j` on [0, 1].
fn phi(j: usize, x: f64) -> f64 {
    ((2 * j + 1) as f64).sqrt() * legendre_eval(j, x)
}

pub fn build_two_scale(k: usize) -> Result<TwoScaleOperators, LegpError> {
    assert!((1..=64).contains(&k), "two-scale order limited to 1..=64");
    let q = (2 * k).min(64);
    let (nodes, weights) = gauss_legendre(q)?;
    let mut h_left = RealMatrix::zeros(k, k);
    let mut h_right = RealMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let mut left = 0.0;
            let mut right = 0.0;
            for (&x, &w) in nodes.iter().zip(&weights) {
                // map [-1,1] -> [0,1/2]; fine basis is sqrt(2)*phi on the half
                let xl = (x + 1.0) / 4.0;
                left += w * phi(i, xl) * std::f64::consts::SQRT_2 * phi(j, 2.0 * xl) / 4.0;
                let xr = (x + 1.0) / 4.0 + 0.5;
                right += w * phi(i, xr) * std::f64::consts::SQRT_2 * phi(j, 2.0 * (xr - 0.5)) / 4.0;
            }
            h_left[(i, j)] = left;
            h_right[(i, j)] = right;
        }
    }
    let hd_left = h_left.transpose();
    let hd_right = h_right.transpose();
    // H H^T must be the identity on coarse coefficients
    let gram = h_left
        .matmul(&hd_left)
        .add(&h_right.matmul(&hd_right))
        .sub(&RealMatrix::identity(k));
    let residual = gram.max_abs();
    if residual > 1e-8 {
        return Err(LegpError::IllConditioned(residual));
    }
    Ok(TwoScaleOperators { k, h_left, h_right, hd_left, hd_right, trainable: false })
}

impl TwoScaleOperators {
    /// Merge fine coefficient pairs into coarse coefficients.
    pub fn up(&self, fine_even: &[f64], fine_odd: &[f64]) -> Vec<f64> {
        let mut out = self.h_left.matvec(fine_even);
        for (o, v) in out.iter_mut().zip(self.h_right.matvec(fine_odd)) {
            *o += v;
        }
        out
    }

    /// Back-project coarse coefficients onto the two half-interval bases.
    pub fn down(&self, coarse: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.hd_left.matvec(coarse), self.hd_right.matvec(coarse))
    }
}

/// Multiscale refinement of a state trajectory `x` (row-major length x k):
/// iteratively merge position pairs up `r_max` scales, back-project each
/// scale to full length, and add the contributions. Tail positions are
/// zero-padded when the length is not divisible by 2^r_max.
pub fn legp_block(x: &[f64], len: usize, ops: &TwoScaleOperators, r_max: usize) -> Vec<f64> {
    let k = ops.k;
    assert_eq!(x.len(), len * k, "trajectory shape mismatch");
    if r_max == 0 {
        return x.to_vec();
    }
    let mut out = x.to_vec();
    let mut current = x.to_vec();
    let mut cur_len = len;
    for _scale in 0..r_max {
        if cur_len < 2 {
            break;
        }
        let half = cur_len.div_ceil(2);
        let zeros = vec![0.0; k];
        let mut coarse = vec![0.0; half * k];
        for l in 0..half {
            let even = &current[(2 * l) * k..(2 * l + 1) * k];
            let odd = if 2 * l + 1 < cur_len {
                &current[(2 * l + 1) * k..(2 * l + 2) * k]
            } else {
                &zeros[..]
            };
            coarse[l * k..(l + 1) * k].copy_from_slice(&ops.up(even, odd));
        }
        // back-project this scale down to the original length
        let mut expanded = coarse.clone();
        let mut exp_len = half;
        while exp_len < len {
            let mut next = vec![0.0; exp_len * 2 * k];
            for l in 0..exp_len {
                let (even, odd) = ops.down(&expanded[l * k..(l + 1) * k]);
                next[(2 * l) * k..(2 * l + 1) * k].copy_from_slice(&even);
                next[(2 * l + 1) * k..(2 * l + 2) * k].copy_from_slice(&odd);
            }
            expanded = next;
            exp_len *= 2;
        }
        for (o, v) in out.iter_mut().zip(expanded.iter().take(len * k)) {
            *o += v;
        }
        current = coarse;
        cur_len = half;
    }
    out
}

/// L2 projection error of `f` onto piecewise polynomials of degree < k on
/// 2^r uniform subintervals of [0, 1], measured on a dense grid.
pub fn piecewise_projection_error<F: Fn(f64) -> f64>(f: &F, k: usize, r: usize) -> f64 {
    let segments = 1usize << r;
    let width = 1.0 / segments as f64;
    let (nodes, weights) = gauss_legendre(32.min(64)).unwrap();
    // per-segment coefficients in the orthonormal local basis
    let mut coeffs = vec![0.0; segments * k];
    for seg in 0..segments {
        let a = seg as f64 * width;
        for j in 0..k {
            let mut acc = 0.0;
            for (&x, &w) in nodes.iter().zip(&weights) {
                let t = a + width * (x + 1.0) / 2.0;
                let local = (t - a) / width;
                acc += w * f(t) * phi(j, local) * width / 2.0;
            }
            // orthonormal w.r.t. the local measure scaled by width
            coeffs[seg * k + j] = acc / width;
        }
    }
    let grid = 10_000;
    let mut err = 0.0;
    for i in 0..grid {
        let t = (i as f64 + 0.5) / grid as f64;
        let seg = ((t / width) as usize).min(segments - 1);
        let local = (t - seg as f64 * width) / width;
        let mut g = 0.0;
        for j in 0..k {
            g += coeffs[seg * k + j] * phi(j, local);
        }
        let d = f(t) - g;
        err += d * d / grid as f64;
    }
    err.sqrt()
}

#[cfg(test)]
mod tests;
