//! Identification of networked linear dynamical systems under noise and
//! node-wise probabilistic adversarial attacks.
//!
//! The crate simulates `x_{t+1} = A x_t + w_t + v_t`, fits one-stage
//! estimators (least squares, row-wise least absolute deviations, and the
//! un-squared ℓ2 loss) and runs the two-stage pipeline: a robust ℓ1 pre-fit,
//! residual-based filtering of suspected attacks, then least squares on the
//! retained samples.

pub mod error;
pub mod estimators;
pub mod filtering;
pub mod harness;
pub mod numerics;
pub mod pipeline;
pub mod rng;
pub mod simulate;
pub mod sysgen;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
