//! Spectral projectors of structured index-2 and index-3 systems.

pub mod alpha;
pub mod context;
pub mod mechanical;
pub mod phi;
pub mod structure;
#[cfg(test)]
pub(crate) mod testing;

pub use alpha::{alpha_lower_bound, AlphaCache, AlphaMode};
pub use context::ProjectorContext;
pub use mechanical::{first_order_sd_realization, gamma_bound, gamma_theta_estimate, GammaEstimator, GammaMode};
pub use phi::{phi_factorization, PhiFactorization};
pub use structure::{MechanicalStructure, StokesStructure};
