//! Short-term electricity load forecasting.
//!
//! Per-half-hour penalized-spline additive models are adapted online by
//! Kalman filters and combined by ML-Poly aggregation; tree ensembles and
//! boosting serve as benchmarks. Change-point analysis of model residuals
//! quantifies demand shifts, and mutual information, Hoeffding's D and
//! Shapley values rank the regressors.
//!
//! The numerical kernels are generic over [`Real`] (`f32` or `f64`); the
//! pipeline layers work in `f64` and the aliases below name those types.

pub mod adapt;
pub mod aggregate;
pub mod bench;
pub mod changepoint;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod gam;
pub mod linalg;
pub mod real;
pub mod select;
pub mod store;
pub mod timegrid;

pub use error::{Error, Result};
pub use real::Real;

/// Dense matrix used by the pipeline.
pub type Matrix = linalg::Matrix<f64>;
/// Single-precision matrix for memory-bound experiments.
pub type Matrix32 = linalg::Matrix<f32>;

/// Version of the library and of the serialized model container.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
