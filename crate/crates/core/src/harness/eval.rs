//! Frequency- and time-domain evaluation and the comparison report.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::input::InputSpec;
use super::model::Model;
use crate::error::{Error, Result};
use crate::linalg::{sparse, SparseLu};
use crate::param_system::sigma_max;

pub const SCHEMA_VERSION: u32 = 1;
/// Relative algebraic residual accepted after consistent initialization.
pub const CONSISTENCY_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 10_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaRow {
    pub omega: f64,
    /// `None` when the pencil is singular at this frequency.
    pub sigma: Option<f64>,
    pub sigma_other: Option<f64>,
    pub error: Option<f64>,
}

impl SigmaRow {
    pub fn flagged(&self, compared: bool) -> bool {
        self.sigma.is_none() || (compared && (self.sigma_other.is_none() || self.error.is_none()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaTable {
    pub labels: Vec<String>,
    pub rows: Vec<SigmaRow>,
}

impl SigmaTable {
    pub fn compared(&self) -> bool {
        self.labels.len() == 2
    }

    /// Largest error over the rows that evaluated cleanly.
    pub fn max_error(&self) -> Option<f64> {
        self.rows.iter().filter_map(|r| r.error).reduce(f64::max)
    }

    pub fn flagged_rows(&self) -> usize {
        let c = self.compared();
        self.rows.iter().filter(|r| r.flagged(c)).count()
    }

    /// Columns `omega,sigma,sigma_other,sigma_error,flagged`; missing values
    /// are empty fields.
    pub fn to_csv(&self) -> Result<String> {
        let c = self.compared();
        let header = ["omega", "sigma", "sigma_other", "sigma_error", "flagged"].map(String::from).to_vec();
        write_csv(
            header,
            self.rows.iter().map(|r| vec![r.omega.to_string(), opt(r.sigma), opt(r.sigma_other), opt(r.error), (r.flagged(c) as u8).to_string()]),
        )
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

/// `sigma_max(G(i w))` on the grid, with an error column when a second model
/// is given. A singular pencil at a grid point flags the row.
pub fn sigma_plot(model: &Model, other: Option<&Model>, omegas: &[f64]) -> Result<SigmaTable> {
    if omegas.is_empty() || omegas.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(Error::Invalid("frequency grid must be nonempty, finite and nonnegative".into()));
    }
    if let Some(o) = other {
        if (o.n_inputs(), o.n_outputs()) != (model.n_inputs(), model.n_outputs()) {
            return Err(Error::Dimension(format!(
                "models have {}x{} and {}x{} transfer functions",
                model.n_outputs(),
                model.n_inputs(),
                o.n_outputs(),
                o.n_inputs()
            )));
        }
    }
    let eval = |m: &Model, w: f64| -> Option<DMatrix<Complex64>> {
        match m.transfer(Complex64::new(0.0, w)) {
            Ok(g) => Some(g),
            Err(e) => {
                log::warn!("{} transfer function at omega = {w:e}: {e}", m.label);
                None
            }
        }
    };
    let rows = omegas
        .par_iter()
        .map(|&w| {
            let g = eval(model, w);
            let h = other.and_then(|o| eval(o, w));
            let error = match (&g, &h) {
                (Some(g), Some(h)) => Some(sigma_max(&(g - h))),
                _ => None,
            };
            SigmaRow { omega: w, sigma: g.as_ref().map(sigma_max), sigma_other: h.as_ref().map(sigma_max), error }
        })
        .collect();
    let mut labels = vec![model.label.clone()];
    if let Some(o) = other {
        labels.push(o.label.clone());
    }
    Ok(SigmaTable { labels, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub consistency_residual: f64,
}

impl Trajectory {
    /// Columns `t,y0,y1,...`.
    pub fn to_csv(&self) -> Result<String> {
        let p = self.y.first().map_or(0, |v| v.len());
        let header = std::iter::once("t".to_string()).chain((0..p).map(|j| format!("y{j}"))).collect();
        write_csv(
            header,
            self.t.iter().zip(&self.y).map(|(t, y)| std::iter::once(t.to_string()).chain(y.iter().map(|v| v.to_string())).collect()),
        )
    }
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Consistent initial state: `Pi_r z0` plus the infinite part forced by the
/// input, `-sum_k Y_k u^(k)(0)`. Returns the state and the relative
/// residual of the algebraic equations `(I - Pi_l)(E z' - A z - B u)`.
pub fn consistent_initial_state(model: &Model, z0: &DMatrix<f64>, input: &InputSpec) -> Result<(DMatrix<f64>, f64)> {
    let y = model.improper_blocks()?;
    let nu = y.len();
    let du = input.derivatives_at(0.0, nu);
    let mut z = model.ctx.apply_right(z0)?;
    let mut zdot_inf = DMatrix::zeros(model.n(), 1);
    for (k, yk) in y.iter().enumerate() {
        z -= yk * column(&du[k]);
        zdot_inf -= yk * column(&du[k + 1]);
    }
    let bu = &model.sys.b * column(&du[0]);
    let ez = sparse::mul(&model.sys.e, &zdot_inf);
    let az = sparse::mul(&model.sys.a, &z);
    let res = model.ctx.apply_left_complement(&(&ez - &az - &bu))?.norm();
    let scale = ez.norm() + az.norm() + bu.norm();
    let rel = if scale > 0.0 { res / scale } else { res };
    Ok((z, rel))
}

/// Implicit trapezoidal rule from the consistent state nearest to `z = 0`;
/// `E - (dt/2) A` is factored once.
pub fn simulate(model: &Model, input: &InputSpec, horizon: f64, dt: f64) -> Result<Trajectory> {
    if input.len() != model.n_inputs() {
        return Err(Error::Dimension(format!("{} input signals for {} inputs", input.len(), model.n_inputs())));
    }
    if !(dt > 0.0 && horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::Invalid(format!("need dt > 0 and a finite horizon >= 0, got dt = {dt}, T = {horizon}")));
    }
    let steps = (horizon / dt).round() as usize;
    if steps > MAX_STEPS {
        return Err(Error::Invalid(format!("{steps} time steps exceed the limit {MAX_STEPS}")));
    }
    let n = model.n();
    let (z0, residual) = consistent_initial_state(model, &DMatrix::zeros(n, 1), input)?;
    if residual > CONSISTENCY_TOL {
        return Err(Error::Accuracy(format!("consistent initialization left algebraic residual {residual:e}")));
    }
    let h = 0.5 * dt;
    let lhs = sparse::lincomb(n, n, &[(1.0, &model.sys.e), (-h, &model.sys.a)]);
    let lu = SparseLu::factor(&lhs).map_err(|e| Error::Singular(format!("E - (dt/2) A: {e}")))?;
    let mut z = z0;
    let mut u = column(&input.eval(0.0));
    let mut t_out = Vec::with_capacity(steps + 1);
    let mut y_out = Vec::with_capacity(steps + 1);
    t_out.push(0.0);
    y_out.push((&model.sys.c * &z).iter().copied().collect::<Vec<_>>());
    for k in 1..=steps {
        let t = k as f64 * dt;
        let u_next = column(&input.eval(t));
        let rhs = sparse::mul(&model.sys.e, &z) + sparse::mul(&model.sys.a, &z) * h + &model.sys.b * ((&u + &u_next) * h);
        z = lu.solve(&rhs);
        u = u_next;
        t_out.push(t);
        y_out.push((&model.sys.c * &z).iter().copied().collect());
    }
    Ok(Trajectory { t: t_out, y: y_out, consistency_residual: residual })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeRow {
    pub t: f64,
    pub y: Vec<f64>,
    pub y_other: Vec<f64>,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeTable {
    pub input: Vec<String>,
    pub horizon: f64,
    pub step: f64,
    pub consistency_residuals: Vec<f64>,
    pub rows: Vec<TimeRow>,
}

impl TimeTable {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(|r| r.error).fold(0.0, f64::max)
    }

    /// Columns `t,y0,...,y_other0,...,error`.
    pub fn to_csv(&self) -> Result<String> {
        let p = self.rows.first().map_or(0, |r| r.y.len());
        let header = std::iter::once("t".to_string())
            .chain((0..p).map(|j| format!("y{j}")))
            .chain((0..p).map(|j| format!("y_other{j}")))
            .chain(std::iter::once("error".to_string()))
            .collect();
        write_csv(
            header,
            self.rows.iter().map(|r| {
                std::iter::once(r.t)
                    .chain(r.y.iter().copied())
                    .chain(r.y_other.iter().copied())
                    .chain(std::iter::once(r.error))
                    .map(|v| v.to_string())
                    .collect()
            }),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCurve {
    pub side: String,
    pub mu: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HankelValues {
    pub proper: Vec<f64>,
    pub improper: Vec<f64>,
    pub kept_proper: usize,
    pub bt_error_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub mu: Vec<f64>,
    pub sigma: SigmaTable,
    pub time: Option<TimeTable>,
    pub hankel: Option<HankelValues>,
    pub estimator_curves: Vec<EstimatorCurve>,
    /// Seconds per phase.
    pub wall_times: BTreeMap<String, f64>,
}

impl EvaluationReport {
    pub fn max_sigma_error(&self) -> Option<f64> {
        self.sigma.max_error()
    }

    pub fn max_time_error(&self) -> Option<f64> {
        self.time.as_ref().map(|t| t.max_error())
    }

    /// Writes `report.json`, `sigma.csv` and, with a scenario, `time.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("sigma.csv"), self.sigma.to_csv()?)?;
        if let Some(t) = &self.time {
            std::fs::write(dir.join("time.csv"), t.to_csv()?)?;
        }
        Ok(())
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let r: EvaluationReport = serde_json::from_str(&std::fs::read_to_string(dir.as_ref().join("report.json"))?)?;
        if r.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!("report schema {} is not {SCHEMA_VERSION}", r.schema_version)));
        }
        Ok(r)
    }
}

/// Time-domain scenario resolved to expressions.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub input: InputSpec,
    pub horizon: f64,
    pub step: f64,
}

/// Sigma plots and, with a scenario, trajectories of both models.
pub fn compare(model: &Model, other: &Model, omegas: &[f64], scenario: Option<&Scenario>) -> Result<EvaluationReport> {
    let mut wall_times = BTreeMap::new();
    let t0 = std::time::Instant::now();
    let sigma = sigma_plot(model, Some(other), omegas)?;
    wall_times.insert("sigma_plot".to_string(), t0.elapsed().as_secs_f64());
    let time = match scenario {
        Some(sc) => {
            let t0 = std::time::Instant::now();
            let a = simulate(model, &sc.input, sc.horizon, sc.step)?;
            let b = simulate(other, &sc.input, sc.horizon, sc.step)?;
            wall_times.insert("simulate".to_string(), t0.elapsed().as_secs_f64());
            let rows = a
                .t
                .iter()
                .zip(a.y.iter().zip(&b.y))
                .map(|(t, (ya, yb))| TimeRow {
                    t: *t,
                    y: ya.clone(),
                    y_other: yb.clone(),
                    error: ya.iter().zip(yb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(),
                })
                .collect();
            Some(TimeTable {
                input: sc.input.channels.iter().map(|e| e.to_string()).collect(),
                horizon: sc.horizon,
                step: sc.step,
                consistency_residuals: vec![a.consistency_residual, b.consistency_residual],
                rows,
            })
        }
        None => None,
    };
    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        mu: model.mu.clone(),
        sigma,
        time,
        hankel: None,
        estimator_curves: Vec::new(),
        wall_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::input::InputExpr;
    use crate::models::{make_stokes, StokesConfig, StokesVariant};

    fn scalar(e: f64, a: f64) -> Model {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Model::dense("scalar", &m(e), &m(a), &m(1.0), &m(1.0)).unwrap()
    }

    fn spec(s: &str) -> InputSpec {
        InputSpec::new(vec![s.parse::<InputExpr>().unwrap()])
    }

    #[test]
    fn scalar_sigma_plot() {
        let m = scalar(1.0, -1.0);
        let t = sigma_plot(&m, None, &[0.0, 1e6]).unwrap();
        assert!((t.rows[0].sigma.unwrap() - 1.0).abs() < 1e-15);
        assert!(t.rows[1].sigma.unwrap() <= 2e-6);
        assert!(t.rows[1].error.is_none());
    }

    #[test]
    fn singular_frequency_is_flagged() {
        // 1 / (s - i) has a pole on the grid at omega = 1
        let e = DMatrix::identity(2, 2);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let m = Model::dense("osc", &e, &a, &b, &c).unwrap();
        let t = sigma_plot(&m, None, &[0.5, 1.0, 2.0]).unwrap();
        assert!(t.rows[1].sigma.is_none());
        assert_eq!(t.flagged_rows(), 1);
        assert!(t.rows[0].sigma.is_some() && t.rows[2].sigma.is_some());
    }

    #[test]
    fn scalar_step_response_is_second_order() {
        let m = scalar(1.0, -1.0);
        let mut errs = Vec::new();
        for dt in [0.1, 0.05] {
            let tr = simulate(&m, &spec("1"), 2.0, dt).unwrap();
            let err = tr.t.iter().zip(&tr.y).map(|(t, y)| (y[0] - (1.0 - (-t).exp())).abs()).fold(0.0, f64::max);
            assert!(err <= dt * dt, "dt {dt}: {err}");
            errs.push(err);
        }
        assert!(errs[0] / errs[1] > 3.5);
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let cfg = StokesConfig { resolution: 3, variant: StokesVariant::Improper, ..Default::default() };
        let (sys, st) = make_stokes(&cfg).unwrap();
        let m = Model::full("fom", &st, &sys, &[1.0]).unwrap();
        let tr = simulate(&m, &InputSpec::zero(1), 1.0, 0.1).unwrap();
        assert!(tr.y.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn stokes_initialization_is_consistent() {
        for variant in [StokesVariant::ProperOnly, StokesVariant::Improper] {
            let cfg = StokesConfig { resolution: 4, variant, ..Default::default() };
            let (sys, st) = make_stokes(&cfg).unwrap();
            let m = Model::full("fom", &st, &sys, &[0.7]).unwrap();
            let (z, res) = consistent_initial_state(&m, &DMatrix::zeros(m.n(), 1), &spec("-2 - sin(t)")).unwrap();
            assert!(res <= CONSISTENCY_TOL, "{variant:?}: {res:e}");
            // G^T x + B_2 u = 0 at t = 0
            let (n, q) = (st.n(), st.q());
            let g = sparse::to_dense(&st.g.evaluate(&[0.7]));
            let b2 = sparse::to_dense(&st.b2.evaluate(&[0.7]));
            let c = g.transpose() * z.rows(0, n) + b2 * (-2.0);
            assert!(c.norm() <= 1e-10 * (1.0 + z.norm()), "{variant:?}: {:e}", c.norm());
            assert_eq!(z.nrows(), n + q);
        }
    }

    #[test]
    fn model_against_itself() {
        let cfg = StokesConfig { resolution: 3, ..Default::default() };
        let (sys, st) = make_stokes(&cfg).unwrap();
        let m = Model::full("fom", &st, &sys, &[1.1]).unwrap();
        let sc = Scenario { input: spec("-2 - sin(t)"), horizon: 1.0, step: 0.05 };
        let omegas = crate::balanced_truncation::log_grid(1e-2, 1e2, 7);
        let r = compare(&m, &m, &omegas, Some(&sc)).unwrap();
        assert!(r.max_sigma_error().unwrap() <= 1e-14);
        assert!(r.max_time_error().unwrap() <= 1e-14);
        let dir = tempfile::tempdir().unwrap();
        r.write(dir.path()).unwrap();
        assert_eq!(EvaluationReport::read(dir.path()).unwrap(), r);
        let csv = std::fs::read_to_string(dir.path().join("time.csv")).unwrap();
        assert_eq!(csv.lines().count(), r.time.as_ref().unwrap().rows.len() + 1);
    }
}
