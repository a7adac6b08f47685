//! Tape-based reverse-mode differentiation over the fixed op vocabulary
//! used by the forecaster, plus Adam and a finite-difference checker.
//!
//! Complex quantities are carried as separate real/imaginary tensors (or
//! as stacked (.., 2, n) layouts for the spectral ops); adjoints treat
//! real and imaginary parts as independent real parameters.

mod adam;
mod gradcheck;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, op_error_table};
pub use params::{Param, ParamStore};
pub use tape::{NodeId, Tape, Value};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("backward called before any forward computation")]
    BackwardBeforeForward,
    #[error("backward may run exactly once per forward pass")]
    DoubleBackward,
    #[error("loss node must be scalar, got {0} elements")]
    NonScalarLoss(usize),
}

#[cfg(test)]
mod tests;
