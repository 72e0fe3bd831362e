//! Experiment configuration files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::input::{InputSignal, InputSpec};
use super::eval::Scenario;
use crate::balanced_truncation::{log_grid, TruncationRule};
use crate::error::{Error, Result};
use crate::lyapunov::AdiOptions;
use crate::models::{StokesConfig, TripleChainConfig};
use crate::param_system::ParamBox;
use crate::projectors::GammaMode;
use crate::reduced_basis::Estimator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSource {
    Stokes(StokesConfig),
    TripleChain {
        chain: TripleChainConfig,
        #[serde(default)]
        gamma: GammaMode,
    },
    /// A saved system bundle; mechanical bundles are transformed with `gamma`.
    Bundle {
        path: PathBuf,
        #[serde(default)]
        gamma: GammaMode,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Offline,
    Online,
    #[default]
    Evaluate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSetSpec {
    /// Tensor grid with equidistant points per axis.
    Grid { points_per_axis: usize },
    /// Uniform samples; the seed defaults to the experiment seed.
    Random {
        count: usize,
        #[serde(default)]
        seed: Option<u64>,
    },
    List { params: Vec<Vec<f64>> },
}

impl TestSetSpec {
    pub fn build(&self, param_box: &ParamBox, default_seed: u64) -> Result<Vec<Vec<f64>>> {
        let set = match self {
            TestSetSpec::Grid { points_per_axis } => param_box.grid(*points_per_axis),
            TestSetSpec::Random { count, seed } => random_params(param_box, *count, seed.unwrap_or(default_seed)),
            TestSetSpec::List { params } => params.clone(),
        };
        if set.is_empty() {
            return Err(Error::Invalid("test set is empty".into()));
        }
        if let Some(p) = set.iter().find(|p| p.len() != param_box.dim() || !param_box.contains(p)) {
            return Err(Error::Domain { mu: p.clone() });
        }
        Ok(set)
    }
}

/// Deterministic uniform samples in the box.
pub fn random_params(param_box: &ParamBox, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| param_box.bounds.iter().map(|(lo, hi)| if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo }).collect())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgebraicTreatment {
    /// Balanced truncation of the improper Gramians (Smith factors).
    ImproperBt,
    /// Markov parameters from transfer-function samples, realized separately.
    MarkovTf,
    /// Proper part only.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OfflineSettings {
    pub tol: f64,
    pub estimator: Estimator,
    pub adi: AdiOptions,
    pub max_samples: Option<usize>,
    /// Enrich with solutions of the error equation instead of full solves.
    pub error_variant: bool,
}

impl Default for OfflineSettings {
    fn default() -> Self {
        OfflineSettings { tol: 1e-4, estimator: Estimator::Delta2, adi: AdiOptions::default(), max_samples: None, error_variant: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid { lo: 1e-4, hi: 1e4, count: 200 }
    }
}

impl FrequencyGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi >= self.lo && self.hi.is_finite() && self.count > 0) {
            return Err(Error::Invalid(format!("frequency grid {self:?} must be nonempty with 0 < lo <= hi")));
        }
        Ok(())
    }

    pub fn omegas(&self) -> Vec<f64> {
        log_grid(self.lo, self.hi, self.count)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeScenario {
    /// One signal per input channel.
    pub input: Vec<InputSignal>,
    pub horizon: f64,
    pub step: f64,
}

impl TimeScenario {
    pub fn resolve(&self) -> Result<Scenario> {
        if !(self.step > 0.0 && self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Invalid(format!("time scenario needs step > 0 and horizon >= 0, got {self:?}")));
        }
        Ok(Scenario { input: InputSpec::parse(&self.input)?, horizon: self.horizon, step: self.step })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    #[serde(default)]
    pub phase: Phase,
    pub test_set: TestSetSpec,
    #[serde(default)]
    pub offline: OfflineSettings,
    #[serde(default = "default_truncation")]
    pub truncation: TruncationRule,
    #[serde(default = "default_treatment")]
    pub algebraic: AlgebraicTreatment,
    #[serde(default)]
    pub frequency: FrequencyGrid,
    #[serde(default)]
    pub time: Option<TimeScenario>,
    /// Parameters for the online phase.
    #[serde(default)]
    pub mu: Vec<Vec<f64>>,
    /// Overrides the index used for the improper part.
    #[serde(default)]
    pub index: Option<usize>,
    /// Sampling frequency for Markov extraction; defaults from the spectrum.
    #[serde(default)]
    pub omega_base: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_truncation() -> TruncationRule {
    TruncationRule::RelativeThreshold(1e-8)
}

fn default_treatment() -> AlgebraicTreatment {
    AlgebraicTreatment::None
}

impl ExperimentConfig {
    pub fn new(system: SystemSource, test_set: TestSetSpec) -> Self {
        ExperimentConfig {
            system,
            phase: Phase::default(),
            test_set,
            offline: OfflineSettings::default(),
            truncation: default_truncation(),
            algebraic: default_treatment(),
            frequency: FrequencyGrid::default(),
            time: None,
            mu: Vec::new(),
            index: None,
            omega_base: None,
            seed: 0,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        // bundle paths are relative to the config file
        if let SystemSource::Bundle { path: p, .. } = &mut cfg.system {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let SystemSource::Bundle { path, .. } = &self.system {
            if !path.join("system.json").is_file() {
                return Err(Error::Invalid(format!("bundle {} has no system.json", path.display())));
            }
        }
        match &self.test_set {
            TestSetSpec::Grid { points_per_axis: 0 } | TestSetSpec::Random { count: 0, .. } => {
                return Err(Error::Invalid("test set is empty".into()))
            }
            TestSetSpec::List { params } if params.is_empty() => return Err(Error::Invalid("test set is empty".into())),
            _ => {}
        }
        if !(self.offline.tol > 0.0 && self.offline.tol.is_finite()) {
            return Err(Error::Invalid(format!("offline tolerance must be positive, got {}", self.offline.tol)));
        }
        self.offline.adi.validate()?;
        self.truncation.validate()?;
        self.frequency.validate()?;
        if let Some(t) = &self.time {
            t.resolve()?;
        }
        Ok(())
    }
}
