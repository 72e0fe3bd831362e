//! Reduced basis method for parametric projected Lyapunov equations: greedy
//! offline construction of a global basis and online Galerkin solves.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense::{orth, pivoted_extend, psd_factor};
use crate::linalg::lyap::generalized_lyapunov;
use crate::linalg::sparse;
use crate::lyapunov::{compress_factor, generate_shifts, lradi_nonsymmetric, lradi_projected, residual_norm_general, residual_norm_lowrank};
use crate::lyapunov::{AdiOptions, LowRankFactor, Side};
use crate::param_system::{ParametricDaeSystem, SystemMatrices};
use crate::projectors::{AlphaCache, ProjectorContext, StokesStructure};

/// Relative drop tolerance of every basis orthonormalization.
pub const ORTH_DROP: f64 = 1e-12;
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
const PROJECTION_TOL: f64 = 1e-8;
const LOCAL_DEFECT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Delta1,
    Delta2,
}

/// A strictly dissipative Stokes-like family together with its assembled
/// system and the cached `alpha(mu)` bound.
#[derive(Clone, Debug)]
pub struct RbProblem {
    pub structure: StokesStructure,
    pub system: ParametricDaeSystem,
    pub alpha: AlphaCache,
}

/// Everything the estimators need at one parameter, already dualized for
/// the observability side.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub mu: Vec<f64>,
    pub side: Side,
    pub sys: SystemMatrices,
    pub ctx: ProjectorContext,
    /// `Pi_l B` (or `Pi_r^T C^T` on the observability side).
    pub pib: DMatrix<f64>,
    pub alpha: f64,
}

impl RbProblem {
    pub fn new(structure: StokesStructure) -> Result<Self> {
        let system = structure.assemble()?;
        let alpha = AlphaCache::new(&structure, None)?;
        Ok(RbProblem { structure, system, alpha })
    }

    pub fn n_state(&self) -> usize {
        self.system.n_state()
    }

    pub fn snapshot(&self, mu: &[f64], side: Side) -> Result<Snapshot> {
        self.system.check_param(mu)?;
        let sys = self.system.at(mu)?;
        let ctx = ProjectorContext::stokes(&self.structure, mu)?;
        let (sys, ctx) = match side {
            Side::Controllability => (sys, ctx),
            Side::Observability => (sys.dual(), ctx.transposed()),
        };
        let pib = ctx.apply_left(&sys.b)?;
        let alpha = self.alpha.alpha(mu)?;
        Ok(Snapshot { mu: mu.to_vec(), side, sys, ctx, pib, alpha })
    }
}

/// Full-order low-rank solve at one snapshot.
pub fn full_solve(snap: &Snapshot, opts: &AdiOptions) -> Result<LowRankFactor> {
    if snap.pib.norm() == 0.0 {
        return Ok(LowRankFactor::empty(snap.sys.n(), snap.side, &snap.mu));
    }
    let shifts = generate_shifts(&snap.sys, &snap.ctx, opts.shift_count)?;
    lradi_projected(&snap.sys, &snap.pib, &snap.ctx, &shifts, opts, snap.side)
}

/// `orth(Pi_r(mu) V_glob)`.
pub fn local_basis(v_glob: &DMatrix<f64>, ctx: &ProjectorContext) -> Result<DMatrix<f64>> {
    let p = ctx.apply_right(v_glob)?;
    let scale = v_glob.norm();
    if v_glob.ncols() == 0 || p.norm() <= ORTH_DROP * scale {
        return Err(Error::Invalid("projected basis is empty: Pi_r V_glob vanishes".into()));
    }
    // directions just above the drop tolerance can be projector roundoff;
    // trailing columns that Pi_r moves are discarded as well
    let v = orth(&p, ORTH_DROP);
    let pv = ctx.apply_right(&v)?;
    let mut r = v.ncols();
    while r > 0 && (pv.column(r - 1) - v.column(r - 1)).norm() > LOCAL_DEFECT_TOL {
        r -= 1;
    }
    if r == 0 {
        return Err(Error::Invalid("projected basis is empty: no direction survives re-projection".into()));
    }
    Ok(orth(&pv.columns(0, r).into_owned(), ORTH_DROP))
}

#[derive(Clone, Debug)]
pub struct OnlineSolution {
    pub mu: Vec<f64>,
    pub v_mu: DMatrix<f64>,
    pub z_tilde: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

/// Galerkin projection of the pencil onto `V`.
fn reduced_pencil(sys: &SystemMatrices, v: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (v.transpose() * sparse::mul(&sys.e, v), v.transpose() * sparse::mul(&sys.a, v))
}

fn check_stable(e_r: &DMatrix<f64>, a_r: &DMatrix<f64>) -> Result<()> {
    if e_r.nrows() == 0 {
        return Ok(());
    }
    let f = e_r.clone().lu().solve(a_r).ok_or_else(|| Error::Singular("reduced E is singular".into()))?;
    let worst = f.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if worst >= 0.0 {
        return Err(Error::Accuracy(format!("reduced pencil is unstable (max real part {worst:e}); basis inadequate")));
    }
    Ok(())
}

/// Solves `(V^T A V) X (V^T E V)^T + (V^T E V) X (V^T A V)^T = -(V^T Pi_l B)(V^T Pi_l B)^T`
/// and returns the factor `Z = V Z~` with `X = Z~ Z~^T`.
pub fn online_solve(snap: &Snapshot, v_mu: &DMatrix<f64>) -> Result<OnlineSolution> {
    let r = v_mu.ncols();
    let defect = (snap.ctx.apply_right(v_mu)? - v_mu).norm();
    if defect > PROJECTION_TOL * (r as f64).sqrt().max(1.0) {
        return Err(Error::Invalid(format!("local basis leaves the range of Pi_r (defect {defect:e})")));
    }
    let (e_r, a_r) = reduced_pencil(&snap.sys, v_mu);
    check_stable(&e_r, &a_r)?;
    let b_r = v_mu.transpose() * &snap.pib;
    let z_tilde = if b_r.norm() == 0.0 {
        DMatrix::zeros(r, 0)
    } else {
        let x = generalized_lyapunov(&e_r, &a_r, &(&b_r * b_r.transpose()))?;
        psd_factor(&x, f64::EPSILON)
    };
    let z = v_mu * &z_tilde;
    Ok(OnlineSolution { mu: snap.mu.clone(), v_mu: v_mu.clone(), z_tilde, z })
}

/// `||A Z Z^T E^T + E Z Z^T A^T + Pi_l B B^T Pi_l^T||_F`.
pub fn residual_fro(snap: &Snapshot, z: &DMatrix<f64>) -> Result<f64> {
    residual_norm_lowrank(&snap.sys.e, &snap.sys.a, z, &snap.pib)
}

pub fn delta1(residual_fro: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::Invalid(format!("alpha must be positive, got {alpha:e}")));
    }
    Ok(residual_fro / alpha)
}

/// `B_l = Pi_l [A Z, E Z, B]`, `B_r = Pi_l [E Z, A Z, B]`; `Z` lies in the
/// range of `Pi_r`, so only `B` needs projecting.
pub fn error_rhs(snap: &Snapshot, z: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let az = sparse::mul(&snap.sys.a, z);
    let ez = sparse::mul(&snap.sys.e, z);
    let (n, k, m) = (z.nrows(), z.ncols(), snap.pib.ncols());
    let mut b_l = DMatrix::zeros(n, 2 * k + m);
    let mut b_r = DMatrix::zeros(n, 2 * k + m);
    b_l.columns_mut(0, k).copy_from(&az);
    b_l.columns_mut(k, k).copy_from(&ez);
    b_r.columns_mut(0, k).copy_from(&ez);
    b_r.columns_mut(k, k).copy_from(&az);
    b_l.columns_mut(2 * k, m).copy_from(&snap.pib);
    b_r.columns_mut(2 * k, m).copy_from(&snap.pib);
    (b_l, b_r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Delta2Parts {
    pub estimate: f64,
    pub error_estimate_fro: f64,
    pub corrected_residual_fro: f64,
}

/// `||E^||_F + ||R^||_F / alpha` with `E^` the Galerkin solution of the
/// error equation on `orth(Pi_r W)`.
pub fn delta2(snap: &Snapshot, z: &DMatrix<f64>, w_err: &DMatrix<f64>) -> Result<Delta2Parts> {
    if !(snap.alpha > 0.0) {
        return Err(Error::Invalid(format!("alpha must be positive, got {:e}", snap.alpha)));
    }
    let n = snap.sys.n();
    let k = z.ncols();
    let w = match local_basis(w_err, &snap.ctx) {
        Ok(w) => w,
        Err(Error::Invalid(_)) => DMatrix::zeros(n, 0),
        Err(e) => return Err(e),
    };
    let (b_l, b_r) = error_rhs(snap, z);
    let (e_w, a_w) = reduced_pencil(&snap.sys, &w);
    check_stable(&e_w, &a_w)?;
    let q = (w.transpose() * &b_l) * (w.transpose() * &b_r).transpose();
    let y = generalized_lyapunov(&e_w, &a_w, &q)?;
    let y = (&y + y.transpose()) * 0.5;
    let parts = [(z.clone(), DMatrix::identity(k, k)), (w, y.clone())];
    let r_hat = residual_norm_general(&snap.sys.e, &snap.sys.a, &parts, &snap.pib, &snap.pib)?;
    let e_hat = y.norm();
    Ok(Delta2Parts { estimate: e_hat + r_hat / snap.alpha, error_estimate_fro: e_hat, corrected_residual_fro: r_hat })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub mu: Vec<f64>,
    pub delta1: f64,
    pub delta2: Option<f64>,
    pub residual_fro: f64,
    pub alpha: f64,
    pub online_rank: usize,
}

impl EstimatorReport {
    pub fn value(&self, est: Estimator) -> f64 {
        match est {
            Estimator::Delta1 => self.delta1,
            Estimator::Delta2 => self.delta2.unwrap_or(self.delta1),
        }
    }
}

/// Online solve plus estimators at one parameter. `err_basis` enables
/// `Delta2`.
pub fn estimate_at(snap: &Snapshot, v_glob: &DMatrix<f64>, err_basis: Option<&DMatrix<f64>>) -> Result<(OnlineSolution, EstimatorReport)> {
    let n = snap.sys.n();
    let sol = match local_basis(v_glob, &snap.ctx) {
        Ok(v) => online_solve(snap, &v)?,
        Err(Error::Invalid(_)) => {
            OnlineSolution { mu: snap.mu.clone(), v_mu: DMatrix::zeros(n, 0), z_tilde: DMatrix::zeros(0, 0), z: DMatrix::zeros(n, 0) }
        }
        Err(e) => return Err(e),
    };
    let res = residual_fro(snap, &sol.z)?;
    let d1 = delta1(res, snap.alpha)?;
    let d2 = match err_basis {
        Some(w) => Some(delta2(snap, &sol.z, w)?.estimate),
        None => None,
    };
    let report = EstimatorReport { mu: snap.mu.clone(), delta1: d1, delta2: d2, residual_fro: res, alpha: snap.alpha, online_rank: sol.z.ncols() };
    Ok((sol, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RbOptions {
    pub estimator: Estimator,
    pub adi: AdiOptions,
    /// Basis for the error equation of `Delta2`; `V_glob` when absent.
    #[serde(skip)]
    pub error_basis: Option<DMatrix<f64>>,
    /// Cap on the number of full solves.
    pub max_samples: Option<usize>,
    pub parallel: bool,
}

impl Default for RbOptions {
    fn default() -> Self {
        RbOptions { estimator: Estimator::Delta2, adi: AdiOptions::default(), error_basis: None, max_samples: None, parallel: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "detail")]
pub enum Termination {
    /// Largest estimator over the remaining candidates fell below the tolerance.
    Converged,
    /// Every test parameter was sampled, or the sample cap was hit.
    Exhausted,
    /// A full solve failed; the basis holds the samples taken so far.
    Aborted(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub basis_dim: usize,
    pub max_estimator: f64,
    /// Index into the test set of the maximizer, if any candidate remained.
    pub argmax: Option<usize>,
    pub reports: Vec<EstimatorReport>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReducedBasis {
    #[serde(skip)]
    pub v_glob: DMatrix<f64>,
    pub side: Side,
    pub estimator: Estimator,
    pub tol: f64,
    pub test_set: Vec<Vec<f64>>,
    pub sampled_indices: Vec<usize>,
    pub sampled_params: Vec<Vec<f64>>,
    pub full_solve_ranks: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    /// Estimators of the final basis over the whole test set, sampled
    /// parameters included.
    pub final_reports: Vec<EstimatorReport>,
    pub termination: Termination,
}

impl ReducedBasis {
    pub fn dim(&self) -> usize {
        self.v_glob.ncols()
    }

    /// Number of full solves performed.
    pub fn greedy_iterations(&self) -> usize {
        self.sampled_indices.len()
    }

    pub fn final_max(&self) -> f64 {
        self.final_reports.iter().map(|r| r.value(self.estimator)).fold(0.0, f64::max)
    }

    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.v_glob.ncols();
        (self.v_glob.transpose() * &self.v_glob - DMatrix::identity(k, k)).amax()
    }

    /// Sampled parameters whose estimator grew after enrichment.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for rec in &self.iterations {
            let Some(i) = rec.argmax else { continue };
            if !self.sampled_indices.contains(&i) {
                continue;
            }
            let before = rec.reports.iter().find(|r| r.mu == self.test_set[i]).map(|r| r.value(self.estimator));
            let after = self.final_reports.get(i).map(|r| r.value(self.estimator));
            if let (Some(b), Some(a)) = (before, after) {
                if a > b * (1.0 + 1e-12) + 1e-14 {
                    out.push(i);
                }
            }
        }
        out
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        crate::mtx::write_dense(dir.join("v_glob.mtx"), &self.v_glob)?;
        std::fs::write(dir.join("basis.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut rb: ReducedBasis = serde_json::from_str(&std::fs::read_to_string(dir.join("basis.json"))?)?;
        rb.v_glob = crate::mtx::read_dense(dir.join("v_glob.mtx"))?;
        Ok(rb)
    }

    /// Local basis and online solve at `mu`.
    pub fn online(&self, problem: &RbProblem, mu: &[f64]) -> Result<OnlineSolution> {
        let snap = problem.snapshot(mu, self.side)?;
        online_solve(&snap, &local_basis(&self.v_glob, &snap.ctx)?)
    }
}

fn validate_test_set(problem: &RbProblem, d_test: &[Vec<f64>], tol: f64) -> Result<()> {
    if d_test.is_empty() {
        return Err(Error::Invalid("empty test set".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol:e}")));
    }
    for mu in d_test {
        problem.system.check_param(mu)?;
    }
    Ok(())
}

fn sweep(
    problem: &RbProblem,
    side: Side,
    d_test: &[Vec<f64>],
    idx: &[usize],
    v_glob: &DMatrix<f64>,
    err_basis: Option<&DMatrix<f64>>,
    parallel: bool,
) -> Result<Vec<EstimatorReport>> {
    let eval = |&i: &usize| -> Result<EstimatorReport> {
        let snap = problem.snapshot(&d_test[i], side)?;
        Ok(estimate_at(&snap, v_glob, err_basis)?.1)
    };
    let out: Vec<Result<EstimatorReport>> = if parallel { idx.par_iter().map(eval).collect() } else { idx.iter().map(eval).collect() };
    out.into_iter().collect()
}

/// Greedy loop shared by both variants; `enrich` returns the columns to add
/// at a selected parameter given the current basis.
fn greedy(
    problem: &RbProblem,
    side: Side,
    d_test: &[Vec<f64>],
    tol: f64,
    opts: &RbOptions,
    estimator: Estimator,
    enrich: impl Fn(&Snapshot, &DMatrix<f64>) -> Result<DMatrix<f64>>,
) -> Result<ReducedBasis> {
    validate_test_set(problem, d_test, tol)?;
    opts.adi.validate()?;
    let n = problem.n_state();
    let use_d2 = estimator == Estimator::Delta2;
    let mut rb = ReducedBasis {
        v_glob: DMatrix::zeros(n, 0),
        side,
        estimator,
        tol,
        test_set: d_test.to_vec(),
        sampled_indices: Vec::new(),
        sampled_params: Vec::new(),
        full_solve_ranks: Vec::new(),
        iterations: Vec::new(),
        final_reports: Vec::new(),
        termination: Termination::Exhausted,
    };
    let cap = opts.max_samples.unwrap_or(usize::MAX).max(1);
    let mut next = Some(0usize);
    while let Some(i) = next {
        let snap = problem.snapshot(&d_test[i], side)?;
        let z = match enrich(&snap, &rb.v_glob) {
            Ok(z) => z,
            Err(e) if rb.sampled_indices.is_empty() => return Err(e),
            Err(e) => {
                log::warn!("full solve at {:?} failed: {e}", d_test[i]);
                rb.termination = Termination::Aborted(format!("full solve at {:?} failed: {e}", d_test[i]));
                break;
            }
        };
        rb.sampled_indices.push(i);
        rb.sampled_params.push(d_test[i].clone());
        rb.full_solve_ranks.push(z.ncols());
        rb.v_glob = pivoted_extend(&rb.v_glob, &z, ORTH_DROP);
        if rb.dim() > n / 2 {
            log::warn!("global basis dimension {} exceeds half the state dimension {n}", rb.dim());
        }
        let remaining: Vec<usize> = (0..d_test.len()).filter(|k| !rb.sampled_indices.contains(k)).collect();
        if remaining.is_empty() || rb.sampled_indices.len() >= cap {
            rb.termination = Termination::Exhausted;
            break;
        }
        let err_basis = if use_d2 { Some(opts.error_basis.as_ref().unwrap_or(&rb.v_glob)) } else { None };
        let reports = sweep(problem, side, d_test, &remaining, &rb.v_glob, err_basis, opts.parallel)?;
        // strict comparison keeps the lowest index on ties
        let mut best = 0;
        for (k, r) in reports.iter().enumerate() {
            if r.value(estimator) > reports[best].value(estimator) {
                best = k;
            }
        }
        let max = reports[best].value(estimator);
        rb.iterations.push(IterationRecord { basis_dim: rb.dim(), max_estimator: max, argmax: Some(remaining[best]), reports });
        if max <= tol {
            rb.termination = Termination::Converged;
            next = None;
        } else {
            next = Some(remaining[best]);
        }
    }
    let all: Vec<usize> = (0..d_test.len()).collect();
    let err_basis = if use_d2 { Some(opts.error_basis.as_ref().unwrap_or(&rb.v_glob)) } else { None };
    rb.final_reports = sweep(problem, side, d_test, &all, &rb.v_glob, err_basis, opts.parallel)?;
    let defect = rb.orthonormality_defect();
    if defect > ORTHONORMALITY_TOL {
        return Err(Error::Accuracy(format!("global basis lost orthonormality ({defect:e})")));
    }
    Ok(rb)
}

/// Greedy construction enriching with full solutions of the Lyapunov
/// equation at the selected parameters.
pub fn offline_build(problem: &RbProblem, side: Side, d_test: &[Vec<f64>], tol: f64, opts: &RbOptions) -> Result<ReducedBasis> {
    greedy(problem, side, d_test, tol, opts, opts.estimator, |snap, _| Ok(full_solve(snap, &opts.adi)?.z))
}

/// Greedy construction enriching with solutions of the error equation of
/// the current approximation; `Delta1` drives the selection.
pub fn offline_build_error_variant(problem: &RbProblem, side: Side, d_test: &[Vec<f64>], tol: f64, opts: &RbOptions) -> Result<ReducedBasis> {
    greedy(problem, side, d_test, tol, opts, Estimator::Delta1, |snap, v_glob| {
        let z = if v_glob.ncols() == 0 { DMatrix::zeros(snap.sys.n(), 0) } else { estimate_at(snap, v_glob, None)?.0.z };
        let (b_l, b_r) = error_rhs(snap, &z);
        if b_l.norm() == 0.0 {
            return Ok(DMatrix::zeros(snap.sys.n(), 0));
        }
        let shifts = generate_shifts(&snap.sys, &snap.ctx, opts.adi.shift_count)?;
        let (z_l, _, _) = lradi_nonsymmetric(&snap.sys, &b_l, &b_r, &snap.ctx, &shifts, &opts.adi)?;
        // with an empty basis B_l = B_r, so Z_l Z_l^T is the Gramian itself
        Ok(if z.ncols() == 0 { compress_factor(&z_l, opts.adi.compression_tolerance) } else { z_l })
    })
}
