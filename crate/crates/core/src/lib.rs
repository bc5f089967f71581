pub mod error;
pub mod fixpoint;
pub mod fmw;
pub mod hadamard;
pub mod metrics;
pub mod model;
pub mod nonlin;
pub mod perf;
pub mod scalar;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};

/// Exact rational scalar for identities that must hold without rounding.
pub type Exact = num_rational::BigRational;
pub type Matrix32 = tensor::Matrix<f32>;
pub type Matrix64 = tensor::Matrix<f64>;
