//! Probabilistic forecasting of cellular PRB utilization.
//!
//! The numeric core ([`autodiff`], [`metrics`] and the quantile helpers in
//! [`forecasters`]) is generic over [`Scalar`]; the forecasting pipeline
//! works in `f64`, for which the aliases below are provided.

pub mod autodiff;
pub mod backtest;
pub mod error;
pub mod forecasters;
pub mod hash;
pub mod metrics;
pub mod scalar;
pub mod series;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tape64 = autodiff::Tape<f64>;
pub type ParamStore64 = autodiff::ParamStore<f64>;
pub type AdamState64 = autodiff::AdamState<f64>;
