//! Linear algebra building blocks shared by all modules.

pub mod banded;
pub mod dense;
pub mod eig;
pub mod lyap;
pub mod sparse;

use nalgebra::ComplexField;

/// Scalar field used by the solvers: `f64` or `Complex64`.
pub trait Field: ComplexField<RealField = f64> + Copy {}
impl<T: ComplexField<RealField = f64> + Copy> Field for T {}

pub use banded::{factorization_count, factorization_count_at_least, SparseCholesky, SparseLu};
pub use sparse::Csc;
