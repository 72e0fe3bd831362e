//! Offline and online phases driven by an [`ExperimentConfig`].

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{AlgebraicTreatment, ExperimentConfig, Phase, SystemSource};
use super::eval::{compare, EstimatorCurve, EvaluationReport, HankelValues, SCHEMA_VERSION};
use super::model::Model;
use crate::algebraic_part::{combine_rom, default_omega_base, estimate_markov, realize_polynomial, DEFAULT_RANK_TOL};
use crate::balanced_truncation::{build_rom, Rom};
use crate::error::{Error, Result};
use crate::linalg::factorization_count_at_least;
use crate::lyapunov::shifts::spectral_scale;
use crate::lyapunov::{smith_improper, Side};
use crate::models::{make_stokes, make_triple_chain};
use crate::param_system::bundle::{load_bundle, save_bundle_with_metadata};
use crate::param_system::SystemKind;
use crate::projectors::{first_order_sd_realization, MechanicalStructure, StokesStructure};
use crate::reduced_basis::{
    estimate_at, offline_build, offline_build_error_variant, EstimatorReport, RbOptions, RbProblem, ReducedBasis,
};

/// A loaded experiment: the strictly dissipative Stokes-like family and the
/// settings that drive both phases.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: RbProblem,
    /// Coupling weight when the system came from a mechanical model.
    pub gamma: Option<f64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (structure, gamma) = match &config.system {
            SystemSource::Stokes(cfg) => (make_stokes(cfg)?.1, None),
            SystemSource::TripleChain { chain, gamma } => {
                let (_, mech) = make_triple_chain(chain)?;
                let (st, g) = first_order_sd_realization(&mech, gamma)?;
                (st, Some(g))
            }
            SystemSource::Bundle { path, gamma } => {
                let sys = load_bundle(path)?;
                match sys.kind {
                    SystemKind::StokesLike { .. } => (StokesStructure::from_system(&sys)?, None),
                    SystemKind::Mechanical { .. } => {
                        let (st, g) = first_order_sd_realization(&MechanicalStructure::from_system(&sys)?, gamma)?;
                        (st, Some(g))
                    }
                    SystemKind::General => {
                        return Err(Error::Unsupported("the reduced basis pipeline needs a Stokes-like or mechanical bundle".into()))
                    }
                }
            }
        };
        let problem = RbProblem::new(structure).map_err(|e| e.in_phase("setup"))?;
        Ok(Experiment { config, problem, gamma })
    }

    pub fn test_set(&self) -> Result<Vec<Vec<f64>>> {
        self.config.test_set.build(&self.problem.system.param_box, self.config.seed)
    }

    /// Index used for the improper part.
    pub fn nu(&self) -> usize {
        self.config.index.unwrap_or(self.problem.system.index)
    }

    pub fn full_model(&self, mu: &[f64]) -> Result<Model> {
        let mut m = Model::full("fom", &self.problem.structure, &self.problem.system, mu)?;
        m.nu = self.nu();
        Ok(m)
    }

    fn rb_options(&self) -> RbOptions {
        let o = &self.config.offline;
        RbOptions { estimator: o.estimator, adi: o.adi.clone(), max_samples: o.max_samples, ..RbOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Bases {
    pub controllability: ReducedBasis,
    pub observability: ReducedBasis,
}

impl Bases {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.controllability.save(dir.join("controllability"))?;
        self.observability.save(dir.join("observability"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Bases {
            controllability: ReducedBasis::load(dir.join("controllability"))?,
            observability: ReducedBasis::load(dir.join("observability"))?,
        })
    }

    pub fn get(&self, side: Side) -> &ReducedBasis {
        match side {
            Side::Controllability => &self.controllability,
            Side::Observability => &self.observability,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideSummary {
    pub side: Side,
    pub dim: usize,
    pub greedy_iterations: usize,
    pub basis_dims: Vec<usize>,
    pub iteration_maxima: Vec<f64>,
    pub final_max: f64,
    pub sampled_params: Vec<Vec<f64>>,
    pub termination: String,
}

impl SideSummary {
    fn of(rb: &ReducedBasis) -> Self {
        SideSummary {
            side: rb.side,
            dim: rb.dim(),
            greedy_iterations: rb.greedy_iterations(),
            basis_dims: rb.iterations.iter().map(|r| r.basis_dim).collect(),
            iteration_maxima: rb.iterations.iter().map(|r| r.max_estimator).collect(),
            final_max: rb.final_max(),
            sampled_params: rb.sampled_params.clone(),
            termination: serde_json::to_value(&rb.termination).map(|v| v.to_string()).unwrap_or_default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineReport {
    pub schema_version: u32,
    pub n_state: usize,
    pub test_set_size: usize,
    pub tol: f64,
    pub gamma: Option<f64>,
    pub sides: Vec<SideSummary>,
    pub wall_time: f64,
}

/// Two greedy runs (controllability and observability), persisted under
/// `out` when given.
pub fn run_offline(exp: &Experiment, out: Option<&Path>) -> Result<(Bases, OfflineReport)> {
    let t0 = Instant::now();
    let d_test = exp.test_set()?;
    let opts = exp.rb_options();
    let tol = exp.config.offline.tol;
    let build = |side: Side| -> Result<ReducedBasis> {
        let r = if exp.config.offline.error_variant {
            offline_build_error_variant(&exp.problem, side, &d_test, tol, &opts)
        } else {
            offline_build(&exp.problem, side, &d_test, tol, &opts)
        };
        r.map_err(|e| e.in_phase(&format!("offline {}", side.name())))
    };
    let bases = Bases { controllability: build(Side::Controllability)?, observability: build(Side::Observability)? };
    let report = OfflineReport {
        schema_version: SCHEMA_VERSION,
        n_state: exp.problem.n_state(),
        test_set_size: d_test.len(),
        tol,
        gamma: exp.gamma,
        sides: vec![SideSummary::of(&bases.controllability), SideSummary::of(&bases.observability)],
        wall_time: t0.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out {
        bases.save(dir)?;
        std::fs::write(dir.join("offline_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok((bases, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub schema_version: u32,
    pub mu: Vec<f64>,
    pub treatment: AlgebraicTreatment,
    pub rom_order: usize,
    pub r_p: usize,
    pub r_i: usize,
    pub local_dims: Vec<usize>,
    pub estimators: Vec<EstimatorReport>,
    /// Whether every estimator is at most the offline tolerance.
    pub within_tolerance: bool,
    pub proper_hankel: Vec<f64>,
    pub improper_hankel: Vec<f64>,
    pub bt_error_bound: f64,
    /// Factorizations of matrices of full dimension during the phase.
    pub full_factorizations: usize,
    pub wall_time: f64,
}

/// Local bases, online Lyapunov solves, balanced truncation and the
/// configured algebraic treatment at one parameter.
pub fn run_online(exp: &Experiment, bases: &Bases, mu: &[f64]) -> Result<(Rom, OnlineReport)> {
    let t0 = Instant::now();
    let n_full = exp.problem.n_state();
    let f0 = factorization_count_at_least(n_full);
    let phase = |e: Error| e.in_phase("online");
    let mut snaps = Vec::new();
    let mut sols = Vec::new();
    let mut reports = Vec::new();
    for side in [Side::Controllability, Side::Observability] {
        let snap = exp.problem.snapshot(mu, side).map_err(phase)?;
        let (sol, rep) = estimate_at(&snap, &bases.get(side).v_glob, None).map_err(phase)?;
        if sol.z.ncols() == 0 && snap.pib.norm() > 0.0 {
            return Err(Error::Invalid(format!("the {} basis has no direction in the deflating subspace at {mu:?}", side.name())).in_phase("online"));
        }
        snaps.push(snap);
        sols.push(sol);
        reports.push(rep);
    }
    let tol = exp.config.offline.tol;
    let estimator = exp.config.offline.estimator;
    let within = reports.iter().all(|r| r.value(estimator) <= tol);
    if !within {
        log::warn!("estimator above the offline tolerance {tol:e} at {mu:?}; the basis may be inadequate here");
    }
    let (sc, so) = (&snaps[0], &snaps[1]);
    let (r_p, s_p) = (&sols[0].z, &sols[1].z);
    let empty = DMatrix::zeros(n_full, 0);
    let nu = exp.nu();
    let rule = exp.config.truncation;
    let rom = match exp.config.algebraic {
        AlgebraicTreatment::None => build_rom(&sc.sys, &sc.ctx, s_p, r_p, &empty, &empty, rule),
        AlgebraicTreatment::ImproperBt => {
            let r_i = smith_improper(&sc.sys, &sc.ctx, nu, Side::Controllability).map_err(phase)?;
            let s_i = smith_improper(&so.sys, &so.ctx, nu, Side::Observability).map_err(phase)?;
            build_rom(&sc.sys, &sc.ctx, s_p, r_p, &s_i.z, &r_i.z, rule)
        }
        AlgebraicTreatment::MarkovTf => {
            let proper = build_rom(&sc.sys, &sc.ctx, s_p, r_p, &empty, &empty, rule).map_err(phase)?;
            let wb = exp.config.omega_base.unwrap_or_else(|| default_omega_base(spectral_scale(&sc.sys, &sc.ctx), nu));
            let markov = estimate_markov(&sc.sys, nu, wb).map_err(phase)?;
            combine_rom(&proper, &realize_polynomial(&markov, DEFAULT_RANK_TOL)?)
        }
    }
    .map_err(phase)?;
    let full_factorizations = factorization_count_at_least(n_full) - f0;
    if exp.config.algebraic == AlgebraicTreatment::None && full_factorizations > 0 {
        return Err(Error::Accuracy(format!("online phase factored {full_factorizations} full-order matrices")).in_phase("online"));
    }
    let report = OnlineReport {
        schema_version: SCHEMA_VERSION,
        mu: mu.to_vec(),
        treatment: exp.config.algebraic,
        rom_order: rom.order(),
        r_p: rom.r_p,
        r_i: rom.r_i,
        local_dims: sols.iter().map(|s| s.v_mu.ncols()).collect(),
        estimators: reports,
        within_tolerance: within,
        proper_hankel: rom.proper_hankel.clone(),
        improper_hankel: rom.improper_hankel.clone(),
        bt_error_bound: rom.error_bound(),
        full_factorizations,
        wall_time: t0.elapsed().as_secs_f64(),
    };
    Ok((rom, report))
}

/// Persists a ROM as a parameter-free bundle with its online report.
pub fn save_rom(rom: &Rom, report: &OnlineReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let meta = serde_json::json!({ "mu": rom.mu, "r_p": rom.r_p, "r_i": rom.r_i, "treatment": report.treatment });
    save_bundle_with_metadata(&rom.to_system()?, dir, meta)?;
    std::fs::write(dir.join("online_report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

fn curves(bases: &Bases) -> Vec<EstimatorCurve> {
    [&bases.controllability, &bases.observability]
        .iter()
        .map(|rb| EstimatorCurve {
            side: rb.side.name().to_string(),
            mu: rb.final_reports.iter().map(|r| r.mu.clone()).collect(),
            values: rb.final_reports.iter().map(|r| r.value(rb.estimator)).collect(),
        })
        .collect()
}

/// Online phase plus the full-versus-reduced comparison at one parameter.
pub fn evaluate(exp: &Experiment, bases: &Bases, mu: &[f64], offline_time: Option<f64>) -> Result<(Rom, OnlineReport, EvaluationReport)> {
    let (rom, online) = run_online(exp, bases, mu)?;
    let fom = exp.full_model(mu)?;
    let red = Model::reduced("rom", &rom)?;
    let scenario = exp.config.time.as_ref().map(|t| t.resolve()).transpose()?;
    let mut report = compare(&fom, &red, &exp.config.frequency.omegas(), scenario.as_ref()).map_err(|e| e.in_phase("evaluate"))?;
    report.hankel = Some(HankelValues {
        proper: rom.proper_hankel.clone(),
        improper: rom.improper_hankel.clone(),
        kept_proper: rom.r_p,
        bt_error_bound: rom.error_bound(),
    });
    report.estimator_curves = curves(bases);
    report.wall_times.insert("online".to_string(), online.wall_time);
    if let Some(t) = offline_time {
        report.wall_times.insert("offline".to_string(), t);
    }
    Ok((rom, online, report))
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RunSummary {
    pub offline: Option<OfflineReport>,
    pub online: Vec<OnlineReport>,
    pub evaluations: usize,
    pub wall_times: BTreeMap<String, f64>,
}

/// Runs the phase named in the configuration, writing everything under
/// `out`. Later phases reuse bases found in `out` and build them otherwise.
pub fn run_experiment(exp: &Experiment, out: &Path) -> Result<RunSummary> {
    std::fs::create_dir_all(out)?;
    let mut summary = RunSummary::default();
    let have_bases = out.join("controllability/basis.json").is_file() && out.join("observability/basis.json").is_file();
    let (bases, offline_time) = if exp.config.phase == Phase::Offline || !have_bases {
        let (b, r) = run_offline(exp, Some(out))?;
        let t = r.wall_time;
        summary.offline = Some(r);
        (b, Some(t))
    } else {
        (Bases::load(out)?, None)
    };
    if let Some(t) = offline_time {
        summary.wall_times.insert("offline".into(), t);
    }
    if exp.config.phase != Phase::Offline {
        for (k, mu) in exp.config.mu.iter().enumerate() {
            let dir = out.join(format!("mu_{k}"));
            if exp.config.phase == Phase::Online {
                let (rom, rep) = run_online(exp, &bases, mu)?;
                save_rom(&rom, &rep, dir.join("rom"))?;
                summary.online.push(rep);
            } else {
                let (rom, rep, eval) = evaluate(exp, &bases, mu, offline_time)?;
                save_rom(&rom, &rep, dir.join("rom"))?;
                eval.write(&dir)?;
                summary.online.push(rep);
                summary.evaluations += 1;
            }
        }
        let online_total: f64 = summary.online.iter().map(|r| r.wall_time).sum();
        summary.wall_times.insert("online".into(), online_total);
    }
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{TestSetSpec, TimeScenario};
    use crate::harness::input::InputSignal;
    use crate::models::{StokesConfig, StokesVariant};

    fn stokes_exp(variant: StokesVariant, parametric_input: bool, algebraic: AlgebraicTreatment) -> Experiment {
        let st = StokesConfig { resolution: 4, variant, parametric_input, ..Default::default() };
        let mut cfg = ExperimentConfig::new(SystemSource::Stokes(st), TestSetSpec::Grid { points_per_axis: 5 });
        cfg.algebraic = algebraic;
        cfg.frequency.count = 40;
        Experiment::new(cfg).unwrap()
    }

    #[test]
    fn online_at_sampled_parameter_matches_direct_bt() {
        let exp = stokes_exp(StokesVariant::ProperOnly, false, AlgebraicTreatment::None);
        let (bases, rep) = run_offline(&exp, None).unwrap();
        assert!(rep.sides.iter().all(|s| s.greedy_iterations == 1));
        let mu = bases.controllability.sampled_params[0].clone();
        let (rom, online) = run_online(&exp, &bases, &mu).unwrap();
        assert_eq!(online.full_factorizations, 0);
        // direct balanced truncation from full LR-ADI factors
        let opts = crate::lyapunov::AdiOptions::default();
        let sc = exp.problem.snapshot(&mu, Side::Controllability).unwrap();
        let so = exp.problem.snapshot(&mu, Side::Observability).unwrap();
        let zc = crate::reduced_basis::full_solve(&sc, &opts).unwrap().z;
        let zo = crate::reduced_basis::full_solve(&so, &opts).unwrap().z;
        let empty = DMatrix::zeros(exp.problem.n_state(), 0);
        let direct = build_rom(&sc.sys, &sc.ctx, &zo, &zc, &empty, &empty, exp.config.truncation).unwrap();
        let a = Model::reduced("rb", &rom).unwrap();
        let b = Model::reduced("direct", &direct).unwrap();
        let t = crate::harness::eval::sigma_plot(&a, Some(&b), &exp.config.frequency.omegas()).unwrap();
        assert!(t.max_error().unwrap() <= 1e-6, "{:e}", t.max_error().unwrap());
    }

    #[test]
    fn none_and_markov_agree_on_proper_system() {
        let e1 = stokes_exp(StokesVariant::ProperOnly, false, AlgebraicTreatment::None);
        let mut cfg = e1.config.clone();
        cfg.algebraic = AlgebraicTreatment::MarkovTf;
        let e2 = Experiment::new(cfg).unwrap();
        let (bases, _) = run_offline(&e1, None).unwrap();
        let (r1, _) = run_online(&e1, &bases, &[0.9]).unwrap();
        let (r2, _) = run_online(&e2, &bases, &[0.9]).unwrap();
        let t = crate::harness::eval::sigma_plot(
            &Model::reduced("none", &r1).unwrap(),
            Some(&Model::reduced("markov", &r2).unwrap()),
            &e1.config.frequency.omegas(),
        )
        .unwrap();
        assert!(t.max_error().unwrap() <= 1e-8, "{:e}", t.max_error().unwrap());
    }

    #[test]
    fn parameter_independent_bundle_needs_one_sample() {
        let st = StokesConfig { resolution: 3, mu_box: (1.0, 1.0), ..Default::default() };
        let (sys, _) = make_stokes(&st).unwrap();
        let dir = tempfile::tempdir().unwrap();
        crate::param_system::bundle::save_bundle(&sys, dir.path().join("sys")).unwrap();
        let cfg = ExperimentConfig::new(
            SystemSource::Bundle { path: dir.path().join("sys"), gamma: Default::default() },
            TestSetSpec::List { params: vec![vec![1.0]; 3] },
        );
        let exp = Experiment::new(cfg).unwrap();
        let (_, rep) = run_offline(&exp, Some(&dir.path().join("out"))).unwrap();
        for s in &rep.sides {
            assert_eq!(s.greedy_iterations, 1);
            assert!(s.final_max <= 1e-10, "{:e}", s.final_max);
        }
        assert!(dir.path().join("out/offline_report.json").is_file());
    }

    #[test]
    fn run_experiment_writes_artifacts() {
        let mut exp = stokes_exp(StokesVariant::Improper, true, AlgebraicTreatment::ImproperBt);
        exp.config.mu = vec![vec![1.28]];
        exp.config.time = Some(TimeScenario { input: vec![InputSignal::Text("-2 - sin(t)".into())], horizon: 2.0, step: 0.05 });
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&exp, dir.path()).unwrap();
        assert_eq!(s.evaluations, 1);
        let rep = EvaluationReport::read(dir.path().join("mu_0")).unwrap();
        assert!(rep.max_sigma_error().unwrap().is_finite());
        assert!(rep.max_time_error().unwrap().is_finite());
        assert!(rep.wall_times["offline"] >= rep.wall_times["online"]);
        assert!(dir.path().join("mu_0/rom/system.json").is_file());
        // second run reuses the saved bases
        exp.config.phase = Phase::Online;
        let s2 = run_experiment(&exp, dir.path()).unwrap();
        assert!(s2.offline.is_none());
        assert_eq!(s2.online[0].rom_order, s.online[0].rom_order);
    }
}
