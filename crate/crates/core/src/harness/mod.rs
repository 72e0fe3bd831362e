//! Experiment orchestration: configuration, offline and online phases,
//! sigma plots, time simulation and reports.

pub mod config;
pub mod eval;
pub mod input;
pub mod model;
pub mod pipeline;

pub use config::{AlgebraicTreatment, ExperimentConfig, FrequencyGrid, Phase, SystemSource, TestSetSpec, TimeScenario};
pub use eval::{compare, consistent_initial_state, sigma_plot, simulate, EvaluationReport, Scenario, SigmaTable, Trajectory};
pub use input::{InputExpr, InputSignal, InputSpec};
pub use model::Model;
pub use pipeline::{evaluate, run_experiment, run_offline, run_online, save_rom, Bases, Experiment, OfflineReport, OnlineReport};
