//! Softmax and cross-entropy attention regression.
//!
//! Objectives, closed-form gradients and Hessians, an approximate Newton
//! solver with exact and row-sampled Hessians, InfoNCE estimators with a
//! bilinear critic, and the finite-difference and spectral oracles used to
//! check all of them.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calculus;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod model;
pub mod nce;
pub mod newton;
pub mod seeds;
pub mod suite;
pub mod verify;

pub use error::{Error, Result};
pub use model::{LossBreakdown, Matrix, ModelState, ProblemInstance, RegMode, Terms, Vector};
pub use newton::{HessianMode, SolveTrace, SolverConfig};
