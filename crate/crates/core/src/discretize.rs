//! Conversion of continuous (delta, A, B) to discrete (A_bar, B_bar):
//! zero-order hold for the state matrix, forward Euler for the input map,
//! plus the exact zero-state-response rule kept as a test oracle.

use num_complex::Complex64;

use crate::tensor::{matexp, RealMatrix, Tensor3, TensorError};

/// Strictly positive per-step sizes, (batch, length, channels).
///
/// Produced through softplus upstream so positivity is structural; the
/// constructor still rejects nonpositive entries defensively.
#[derive(Debug, Clone)]
pub struct StepSizes {
    pub delta: Tensor3,
}

impl StepSizes {
    pub fn new(delta: Tensor3) -> Self {
        assert!(
            delta.data.iter().all(|&d| d > 0.0),
            "step sizes must be strictly positive"
        );
        Self { delta }
    }
}

/// Diagonal path: A_bar_n = exp(delta * lambda_n), B_bar_n = delta * B_n.
pub fn discretize_zoh_euler_diag(
    lambda: &[Complex64],
    b: &[Complex64],
    delta: f64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    assert_eq!(lambda.len(), b.len());
    let a_bar = lambda.iter().map(|l| (l * delta).exp()).collect();
    let b_bar = b.iter().map(|v| v * delta).collect();
    (a_bar, b_bar)
}

/// Dense path through the matrix exponential.
pub fn discretize_zoh_euler_dense(
    a: &RealMatrix,
    b: &[f64],
    delta: f64,
) -> Result<(RealMatrix, Vec<f64>), TensorError> {
    let a_bar = matexp(&a.scale(delta))?;
    let b_bar = b.iter().map(|v| v * delta).collect();
    Ok((a_bar, b_bar))
}

/// Exact ZOH input map: ((exp(delta*lambda) - 1) / lambda) * B, with the
/// series branch for |delta*lambda| below 1e-8. Test oracle only; the
/// training path uses the forward-Euler rule.
pub fn discretize_zoh_exact(
    lambda: &[Complex64],
    b: &[Complex64],
    delta: f64,
) -> Vec<Complex64> {
    assert!(delta > 0.0);
    lambda
        .iter()
        .zip(b)
        .map(|(l, v)| {
            let dl = l * delta;
            if dl.norm() < 1e-8 {
                v * delta
            } else {
                v * (dl.exp() - 1.0) / l
            }
        })
        .collect()
}
