//! State-space sequence modeling toolkit.
//!
//! Building blocks, bottom to top:
//! - [`tensor`]: dense real/complex matrices, Hermitian eigensolver,
//!   matrix exponential, FFT, top-k selection.
//! - [`hippo`]: orthogonal-polynomial state matrices (LegS, LegT, LegP,
//!   real-diagonal) with normal and diagonalized forms.
//! - [`discretize`]: zero-order-hold / forward-Euler conversion of
//!   continuous systems to discrete ones.
//! - [`engine`]: sequential recurrence, parallel associative scan, and
//!   convolution-kernel evaluation of SSMs.
//! - [`legp`]: Gauss-Legendre quadrature and the piecewise two-scale
//!   projection block.
//! - [`autodiff`]: tape-based reverse-mode differentiation and Adam.
//! - [`model`]: the patch-based SSM forecaster.
//! - [`reconstruct`]: online projection / reconstruction benchmark on
//!   band-limited noise.
//! - [`data`]: CSV ingestion, windowing, metrics, synthetic datasets.

pub mod autodiff;
pub mod data;
pub mod discretize;
pub mod engine;
pub mod hippo;
pub mod legp;
pub mod model;
pub mod reconstruct;
pub mod tensor;

pub use tensor::{ComplexMatrix, RealMatrix, Tensor3};
