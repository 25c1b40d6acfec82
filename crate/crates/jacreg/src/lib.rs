//! Training feed-forward networks to solve linear inverse problems
//! `y = A x + n`, with regularizers on the spectral and Frobenius norms of
//! the network Jacobian `J` and the composite map `J A`, estimated
//! matrix-free from vector-Jacobian and Jacobian-vector products.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod jacnorm;
pub mod kernels;
pub mod seeding;
pub mod svd;
pub mod training;
pub mod metrics;
pub mod objectives;
pub mod operators;
pub mod tensor;

pub use error::{Error, Result};
