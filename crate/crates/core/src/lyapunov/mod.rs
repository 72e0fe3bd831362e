//! Low-rank solvers for projected Lyapunov equations.

pub mod adi;
pub mod oracle;
pub mod shifts;
pub mod smith;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use adi::{compress_factor, lradi_nonsymmetric, lradi_projected, residual_norm_general, residual_norm_lowrank, solve_gramian};
pub use oracle::{dense_projected_lyap_oracle, dense_projected_sylvester_oracle, quasi_weierstrass_oracle, QuasiWeierstrass};
pub use shifts::{generate_shifts, ShiftSequence};
pub use smith::{improper_svd_matrix_index2, smith_improper};

/// Which Gramian a factor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Controllability,
    Observability,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Controllability => "controllability",
            Side::Observability => "observability",
        }
    }
}

/// Tall factor `Z` with Gramian `Z Z^T`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowRankFactor {
    #[serde(skip)]
    pub z: DMatrix<f64>,
    pub side: Side,
    pub residual_history: Vec<f64>,
    pub mu: Vec<f64>,
    pub shifts: Vec<Complex64>,
}

impl LowRankFactor {
    pub fn empty(n: usize, side: Side, mu: &[f64]) -> Self {
        LowRankFactor { z: DMatrix::zeros(n, 0), side, residual_history: Vec::new(), mu: mu.to_vec(), shifts: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.z.ncols()
    }

    pub fn gramian(&self) -> DMatrix<f64> {
        &self.z * self.z.transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdiOptions {
    pub max_iterations: usize,
    /// Relative to the Frobenius norm of the right-hand side.
    pub residual_tolerance: f64,
    /// Relative Frobenius tolerance on the Gramian when compressing.
    pub compression_tolerance: f64,
    pub shift_count: usize,
    /// Upper bound on the column count of the returned factor.
    pub max_rank: Option<usize>,
}

impl Default for AdiOptions {
    fn default() -> Self {
        AdiOptions { max_iterations: 300, residual_tolerance: 1e-12, compression_tolerance: 1e-15, shift_count: 12, max_rank: None }
    }
}

impl AdiOptions {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.max_iterations > 0
            && self.residual_tolerance > 0.0
            && self.residual_tolerance < 1.0
            && self.compression_tolerance > 0.0
            && self.compression_tolerance < 1.0
            && self.shift_count > 0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Invalid(format!("invalid ADI options {self:?}")))
        }
    }
}
