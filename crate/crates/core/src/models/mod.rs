//! Benchmark generators: a staggered-grid Stokes discretization and a
//! constrained triple mass-spring-damper chain.

mod stokes;
mod triple_chain;

pub use stokes::{make_stokes, StokesConfig, StokesVariant};
pub use triple_chain::{make_triple_chain, TripleChainConfig};
