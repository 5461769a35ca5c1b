//! Noise-free exact Gaussian-process regression for vector-valued one-step
//! dynamics `x_next = f(x, u)`, with the certified bounds used by synthesis.
//!
//! Every output dimension is an independent GP sharing one squared-exponential
//! kernel over the joint input `w = (x, u)` and therefore one factorization
//! of the Gram matrix. The reported uncertainty `sigma` is the sum of the
//! per-dimension posterior standard deviations.

pub(crate) mod bounds;
mod dataset;
mod kernel;
mod model;

use thiserror::Error;

pub use bounds::{mean_upper_bound, uniform_error_beta, variance_upper_bound, UniformErrorBound};
pub use dataset::{Dataset, TransitionSample};
pub use kernel::Kernel;
pub use model::{Calibration, GpModel, GpSummary, ModelFile, PredictResult};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid kernel hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("probability {0} outside the admissible range")]
    InvalidProbability(f64),
    #[error("discretization gap must be nonnegative (got {0})")]
    NegativeTau(f64),
    #[error("covering gap must be positive (got {0})")]
    NonPositiveTau(f64),
    #[error("duplicate training inputs at rows {first} and {second}")]
    DuplicateInput { first: usize, second: usize },
    #[error(
        "Gram matrix not positive definite even with jitter {jitter:e}; closest inputs are rows \
         {row_a} and {row_b} at squared distance {sq_distance:e}"
    )]
    Factorization { jitter: f64, row_a: usize, row_b: usize, sq_distance: f64 },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
