//! Numerical substrate: tensors, the autodiff tape, batch normalization and Adam.

mod adam;
mod batchnorm;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::{batchnorm, BatchNormOutput, RunningStats, BN_MOMENTUM};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("expected a scalar, got a {0}x{1} tensor")]
    NotScalar(usize, usize),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("batch normalization needs at least 2 rows in training mode, got {0}")]
    BatchSize(usize),
}
