//! Shift parameters for the ADI iteration in the `S(p) = (E + pA)^{-1}`
//! convention, where the ideal shift for a finite eigenvalue `l` is `1/l`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eig::arnoldi_ritz;
use crate::linalg::sparse::{self, Csc};
use crate::linalg::SparseLu;
use crate::param_system::SystemMatrices;
use crate::projectors::ProjectorContext;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSequence {
    pub shifts: Vec<Complex64>,
    pub cyclic: bool,
    /// Set when Ritz estimation failed and crude log-spaced shifts were used.
    pub fallback: bool,
}

impl ShiftSequence {
    pub fn new(shifts: Vec<Complex64>) -> Result<Self> {
        let s = ShiftSequence { shifts, cyclic: true, fallback: false };
        s.validate()?;
        Ok(s)
    }

    pub fn real(shifts: &[f64]) -> Result<Self> {
        Self::new(shifts.iter().map(|&p| Complex64::new(p, 0.0)).collect())
    }

    /// Stable and closed under conjugation with pairs adjacent.
    pub fn validate(&self) -> Result<()> {
        if self.shifts.is_empty() {
            return Err(Error::Invalid("empty shift sequence".into()));
        }
        let mut i = 0;
        while i < self.shifts.len() {
            let p = self.shifts[i];
            if !(p.re < 0.0) || !p.is_finite() {
                return Err(Error::Invalid(format!("shift {p} is not in the open left half-plane")));
            }
            if p.im != 0.0 {
                let ok = self.shifts.get(i + 1).is_some_and(|c| (c - p.conj()).norm() <= 1e-12 * p.norm());
                if !ok {
                    return Err(Error::Invalid(format!("shift {p} is not followed by its conjugate")));
                }
                i += 2;
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    pub fn is_real(&self) -> bool {
        self.shifts.iter().all(|p| p.im == 0.0)
    }
}

/// Complete elliptic integral of the first kind, `K(k)` with `k' = kp`.
fn ellip_k(kp: f64) -> f64 {
    let (mut a, mut b) = (1.0f64, kp);
    for _ in 0..100 {
        if (a - b).abs() <= 1e-16 * a {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    std::f64::consts::PI / (2.0 * a)
}

/// Jacobi `dn(u, k)` via the arithmetic-geometric mean.
fn jacobi_dn(u: f64, k: f64) -> f64 {
    if k == 0.0 {
        return 1.0;
    }
    let mut a = vec![1.0f64];
    let mut c = vec![k];
    let mut b = (1.0 - k * k).max(0.0).sqrt();
    while c.last().unwrap().abs() > 1e-16 && a.len() < 60 {
        let (an, cn) = (0.5 * (a.last().unwrap() + b), 0.5 * (a.last().unwrap() - b));
        b = (a.last().unwrap() * b).sqrt();
        a.push(an);
        c.push(cn);
    }
    let n = a.len() - 1;
    let mut phi = (1u64 << n) as f64 * a[n] * u;
    for j in (1..=n).rev() {
        phi = 0.5 * (phi + (c[j] * phi.sin() / a[j]).clamp(-1.0, 1.0).asin());
    }
    if n == 0 {
        phi = u;
    }
    let ks = k * phi.sin();
    ((1.0 - ks) * (1.0 + ks)).max(0.0).sqrt()
}

/// Wachspress-optimal real shifts in the `(A + qE)` convention for a
/// spectrum with magnitudes in `[a, b]`; returned values are negative.
pub fn wachspress(a: f64, b: f64, count: usize) -> Vec<f64> {
    let (a, b) = (a.min(b), a.max(b));
    if count == 0 || !(a > 0.0) {
        return Vec::new();
    }
    if a >= b * (1.0 - 1e-12) || count == 1 {
        return vec![-(a * b).sqrt()];
    }
    let kp = a / b;
    let k = (1.0 - kp * kp).sqrt();
    let kk = ellip_k(kp);
    (1..=count).map(|j| -b * jacobi_dn((2 * j - 1) as f64 * kk / (2 * count) as f64, k)).collect()
}

fn rational(q: &[Complex64], l: Complex64) -> f64 {
    q.iter().map(|q| ((l - q.conj()) / (l + q)).norm()).product()
}

/// Greedy min-max selection among candidate eigenvalues (heuristic of
/// Penzl); values are in the `(A + qE)` convention.
pub fn penzl_select(cands: &[Complex64], count: usize) -> Vec<Complex64> {
    if cands.is_empty() || count == 0 {
        return Vec::new();
    }
    let push = |out: &mut Vec<Complex64>, q: Complex64| {
        if q.im.abs() <= 1e-12 * q.norm() {
            out.push(Complex64::new(q.re, 0.0));
        } else {
            out.push(q);
            out.push(q.conj());
        }
    };
    let mut out = Vec::new();
    let first = cands
        .iter()
        .min_by(|x, y| {
            let fx = cands.iter().map(|l| rational(&[**x, x.conj()], *l)).fold(0.0, f64::max);
            let fy = cands.iter().map(|l| rational(&[**y, y.conj()], *l)).fold(0.0, f64::max);
            fx.total_cmp(&fy)
        })
        .copied()
        .unwrap();
    push(&mut out, first);
    while out.len() < count {
        let worst = cands.iter().copied().max_by(|x, y| rational(&out, *x).total_cmp(&rational(&out, *y))).unwrap();
        if rational(&out, worst) == 0.0 {
            break;
        }
        push(&mut out, worst);
    }
    out
}

fn solve_real_lu(lu: &SparseLu<f64>, v: &DVector<Complex64>) -> DVector<Complex64> {
    let n = v.len();
    let mut parts = DMatrix::zeros(n, 2);
    for i in 0..n {
        parts[(i, 0)] = v[i].re;
        parts[(i, 1)] = v[i].im;
    }
    let x = lu.solve(&parts);
    DVector::from_fn(n, |i, _| Complex64::new(x[(i, 0)], x[(i, 1)]))
}

fn ritz_eigenvalues(e: &Csc, a: &Csc, ctx: &ProjectorContext, sigma: f64, v0: &DVector<Complex64>, steps: usize) -> Vec<Complex64> {
    let n = e.nrows();
    let m = sparse::lincomb(n, n, &[(1.0, a), (-sigma, e)]);
    let Ok(lu) = SparseLu::factor(&m) else {
        return Vec::new();
    };
    let op = |v: &DVector<Complex64>| {
        let ev = sparse::mul(e, &DMatrix::from_column_slice(n, 1, v.as_slice()));
        let x = solve_real_lu(&lu, &DVector::from_column_slice(ev.as_slice()));
        // keep the Krylov space inside the finite deflating subspace; roundoff
        // otherwise excites the nilpotent part and yields huge spurious values
        match ctx.apply_right(&DMatrix::from_column_slice(n, 1, x.as_slice())) {
            Ok(px) => DVector::from_column_slice(px.as_slice()),
            Err(_) => x,
        }
    };
    let theta = arnoldi_ritz(v0, steps, op);
    let tmax = theta.iter().map(|t| t.norm()).fold(0.0, f64::max);
    theta
        .into_iter()
        .filter(|t| t.norm() > 1e-10 * tmax)
        .map(|t| Complex64::new(sigma, 0.0) + t.inv())
        .filter(|l| l.re < 0.0 && l.is_finite())
        .collect()
}

/// Ritz estimates of finite eigenvalues of the pencil restricted to the
/// deflating subspace, from shift-invert runs at `0` and `-rho`.
pub fn finite_ritz_values(sys: &SystemMatrices, ctx: &ProjectorContext, steps: usize) -> Result<(Vec<Complex64>, f64)> {
    let n = sys.n();
    let rho = spectral_scale(sys, ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5417);
    let r = DMatrix::<f64>::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
    let v = ctx.apply_right(&r)?;
    let v0 = DVector::from_fn(n, |i, _| Complex64::new(v[(i, 0)], 0.0));
    let mut out = ritz_eigenvalues(&sys.e, &sys.a, ctx, 0.0, &v0, steps);
    out.extend(ritz_eigenvalues(&sys.e, &sys.a, ctx, -rho, &v0, steps));
    Ok((out, rho))
}

/// `||A||_1 / ||E||_1` on the differential block.
pub fn spectral_scale(sys: &SystemMatrices, ctx: &ProjectorContext) -> f64 {
    let (e, a) = match ctx.blocks() {
        Some((_, _, e, a, _)) => (e.clone(), a.clone()),
        None => (sys.e.clone(), sys.a.clone()),
    };
    let ne = sparse::norm1(&e);
    if ne == 0.0 {
        1.0
    } else {
        (sparse::norm1(&a) / ne).max(f64::MIN_POSITIVE)
    }
}

/// Shifts for the projected pencil at one parameter. Symmetric pencils get
/// Wachspress shifts on the Ritz interval; others use Penzl's selection.
pub fn generate_shifts(sys: &SystemMatrices, ctx: &ProjectorContext, count: usize) -> Result<ShiftSequence> {
    if count == 0 {
        return Err(Error::Invalid("shift count must be positive".into()));
    }
    let n = sys.n();
    let steps = (2 * count + 20).min(n);
    let (ritz, rho) = finite_ritz_values(sys, ctx, steps)?;
    let symmetric = sparse::is_symmetric(&sys.e, 1e-13) && sparse::is_symmetric(&sys.a, 1e-13);
    let qs: Vec<Complex64> = if ritz.is_empty() {
        Vec::new()
    } else if symmetric {
        let mags: Vec<f64> = ritz.iter().map(|l| -l.re).collect();
        let lo = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = mags.iter().cloned().fold(0.0, f64::max);
        wachspress(lo, hi, count).into_iter().map(|q| Complex64::new(q, 0.0)).collect()
    } else {
        penzl_select(&ritz, count)
    };
    let (qs, fallback) = if qs.is_empty() {
        log::warn!("Ritz estimation failed; using log-spaced shifts");
        let k = count.max(2);
        let v: Vec<Complex64> =
            (0..k).map(|j| Complex64::new(-rho * 10f64.powf(-6.0 * j as f64 / (k - 1) as f64), 0.0)).collect();
        (v, true)
    } else {
        (qs, false)
    };
    let s = ShiftSequence { shifts: qs.into_iter().map(|q| q.inv()).collect(), cyclic: true, fallback };
    s.validate()?;
    Ok(s)
}
