//! Fixtures shared by the benchmarks.

use paradae::harness::{run_offline, AlgebraicTreatment, Bases, Experiment, ExperimentConfig, SystemSource, TestSetSpec};
use paradae::models::{StokesConfig, StokesVariant};

pub fn stokes_config(resolution: usize, variant: StokesVariant) -> StokesConfig {
    StokesConfig { resolution, mu_box: (0.5, 1.5), variant, parametric_input: false }
}

/// A proper-only Stokes experiment on a 10-point grid with default settings.
pub fn stokes_experiment(resolution: usize) -> Experiment {
    let mut cfg = ExperimentConfig::new(
        SystemSource::Stokes(stokes_config(resolution, StokesVariant::ProperOnly)),
        TestSetSpec::Grid { points_per_axis: 10 },
    );
    cfg.algebraic = AlgebraicTreatment::None;
    Experiment::new(cfg).expect("valid benchmark experiment")
}

pub fn offline_bases(exp: &Experiment) -> Bases {
    run_offline(exp, None).expect("offline phase").0
}
