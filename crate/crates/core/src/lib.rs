pub mod algebraic_part;
pub mod balanced_truncation;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lyapunov;
pub mod models;
pub mod mtx;
pub mod param_system;
pub mod projectors;
pub mod reduced_basis;

pub use error::{Error, Result};
