//! Approximate message passing for compressed sensing of piecewise-constant
//! signals, with a Bernoulli-Gaussian prior on the finite differences.
//!
//! The main entry point is [`solve`]. [`tvamp_solve`] is a total-variation
//! AMP baseline, and [`harness`] runs Monte-Carlo experiments over both.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod operators;
pub mod rng;
pub mod scalar;
pub mod signals;
pub mod solver;
pub mod tvamp;

pub use error::{Error, Result};
pub use operators::{LinearOperator, MatrixSpec, OperatorKind};
pub use signals::{generate, measure, nmse, nmse_db, SignalModel, SignalSpec};
pub use solver::{solve, PriorParams, SolveReport, SolverConfig, ThetaMode};
pub use tvamp::{tvamp_solve, TvampConfig};
