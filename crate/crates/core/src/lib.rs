//! Simulation laboratory for least-squares inference on data collected by a
//! penalized EXP4 contextual bandit.
//!
//! * [`environment`]: block-sparse linear losses with bounded noise.
//! * [`experts`]: softmax, neural and uniform base policies, mixture policy,
//!   Monte-Carlo population moments.
//! * [`exp4`]: the penalized EXP4 learner and the Bregman machinery behind it.
//! * [`inference`]: Gram accumulation, OLS/ridge, Wald and self-normalized
//!   intervals.
//! * [`diagnostics`]: stability, regret and normality summaries.
//! * [`harness`]: configuration and the deterministic parallel Monte-Carlo
//!   runner that writes the result CSVs.

pub mod diagnostics;
pub mod environment;
pub mod error;
pub mod exp4;
pub mod experts;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod normal;
pub mod seeds;
pub mod selftest;

pub use error::{Error, Result};
