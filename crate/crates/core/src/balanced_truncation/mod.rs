//! Balanced truncation of a projected DAE from low-rank Gramian factors.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense::{svd, to_complex};
use crate::linalg::sparse;
use crate::param_system::{sigma_max, ParametricDaeSystem, SystemMatrices};
use crate::projectors::ProjectorContext;

/// Relative gap needed between `sigma_{r_p}` and `sigma_{r_p + 1}`.
pub const CUT_GAP: f64 = 1e-10;
/// Improper singular values below this fraction of the largest are zero.
pub const IMPROPER_ZERO: f64 = 1e-12;
/// Improper singular values below this multiple of `||S_i|| ||A|| ||R_i||`
/// are roundoff.
pub const IMPROPER_NOISE: f64 = 1e-14;
/// Proper singular values below this fraction of the largest are treated as
/// numerically zero and never kept (their inverse square roots blow up).
pub const PROPER_RANK_TOL: f64 = 1e-14;
pub const STRUCTURE_TOL: f64 = 1e-8;
/// Relative singular value below which a direction of `N_R` counts as kernel.
pub const NILPOTENT_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRule {
    FixedOrder(usize),
    /// Drop `sigma_k` with `sigma_k / sigma_1 < tau`.
    RelativeThreshold(f64),
    /// Smallest `r_p` with `2 * sum_{j > r_p} sigma_j <= eps`.
    AbsoluteBound(f64),
}

impl TruncationRule {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TruncationRule::FixedOrder(r) => r > 0,
            TruncationRule::RelativeThreshold(t) => t > 0.0 && t.is_finite(),
            TruncationRule::AbsoluteBound(e) => e > 0.0 && e.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("truncation rule parameter must be positive: {self:?}")))
        }
    }

    /// Order requested by the rule before the degeneracy adjustment.
    pub fn order(&self, sigma: &[f64]) -> usize {
        match *self {
            TruncationRule::FixedOrder(r) => r.min(sigma.len()),
            TruncationRule::RelativeThreshold(t) => {
                let s1 = sigma.first().copied().unwrap_or(0.0);
                sigma.iter().take_while(|s| **s >= t * s1 && **s > 0.0).count()
            }
            TruncationRule::AbsoluteBound(eps) => (0..=sigma.len()).find(|&r| bt_error_bound(sigma, r) <= eps).unwrap_or(sigma.len()),
        }
    }
}

/// Reduced model `E_R x' = A_R x + B_R u`, `y = C_R x` with the proper block
/// first.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rom {
    pub e_r: DMatrix<f64>,
    pub a_r: DMatrix<f64>,
    pub b_r: DMatrix<f64>,
    pub c_r: DMatrix<f64>,
    pub r_p: usize,
    pub r_i: usize,
    pub proper_hankel: Vec<f64>,
    pub improper_hankel: Vec<f64>,
    pub mu: Vec<f64>,
    /// Off-block-diagonal defect of `(E_R, A_R)` after assembly.
    pub structure_defect: f64,
}

pub struct SmallSvd {
    pub u: DMatrix<f64>,
    pub sigma: Vec<f64>,
    pub v: DMatrix<f64>,
}

fn small_svd(m: DMatrix<f64>) -> SmallSvd {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return SmallSvd { u: DMatrix::zeros(r, 0), sigma: Vec::new(), v: DMatrix::zeros(c, 0) };
    }
    let s = svd(m, true, true);
    SmallSvd { u: s.u.unwrap(), sigma: s.singular_values.iter().copied().collect(), v: s.v_t.unwrap().transpose() }
}

/// SVD of `S_p^T E R_p` formed from the factors.
pub fn proper_svd(s_p: &DMatrix<f64>, r_p: &DMatrix<f64>, e: &sparse::Csc) -> Result<SmallSvd> {
    if s_p.nrows() != e.nrows() || r_p.nrows() != e.ncols() {
        return Err(Error::Dimension(format!("factors with {} and {} rows for N = {}", s_p.nrows(), r_p.nrows(), e.nrows())));
    }
    Ok(small_svd(s_p.transpose() * sparse::mul(e, r_p)))
}

/// SVD of `S_i^T A R_i`, restricted to the nonzero singular values.
pub fn improper_svd(s_i: &DMatrix<f64>, r_i: &DMatrix<f64>, a: &sparse::Csc) -> Result<SmallSvd> {
    if s_i.nrows() != a.nrows() || r_i.nrows() != a.ncols() {
        return Err(Error::Dimension(format!("factors with {} and {} rows for N = {}", s_i.nrows(), r_i.nrows(), a.nrows())));
    }
    let mut out = small_svd(s_i.transpose() * sparse::mul(a, r_i));
    let smax = out.sigma.first().copied().unwrap_or(0.0);
    // a product that is pure cancellation noise has no nonzero values at all
    let noise = IMPROPER_NOISE * s_i.norm() * r_i.norm() * sparse::norm1(a);
    let k = out.sigma.iter().take_while(|s| **s > IMPROPER_ZERO * smax && **s > noise).count();
    out.sigma.truncate(k);
    out.u = out.u.columns(0, k).into_owned();
    out.v = out.v.columns(0, k).into_owned();
    Ok(out)
}

/// `2 * sum_{j > r_p} sigma_j`.
pub fn bt_error_bound(proper_hankel: &[f64], r_p: usize) -> f64 {
    2.0 * proper_hankel.iter().skip(r_p).sum::<f64>()
}

/// Moves the cut down until `sigma_{r} / sigma_{r+1} > 1 + CUT_GAP`.
pub fn nondegenerate_cut(sigma: &[f64], r: usize) -> Result<usize> {
    let mut r = r.min(sigma.len());
    let requested = r;
    while r > 0 && r < sigma.len() && sigma[r - 1] <= sigma[r] * (1.0 + CUT_GAP) {
        r -= 1;
    }
    if r == 0 && requested > 0 {
        return Err(Error::Invalid(format!(
            "no strict gap in the leading {requested} Hankel singular values; cannot truncate"
        )));
    }
    Ok(r)
}

fn scaled(f: &DMatrix<f64>, basis: &DMatrix<f64>, sigma: &[f64]) -> DMatrix<f64> {
    let mut w = f * basis;
    for (j, s) in sigma.iter().enumerate() {
        w.column_mut(j).scale_mut(1.0 / s.sqrt());
    }
    w
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

struct Projection {
    w_p: DMatrix<f64>,
    t_p: DMatrix<f64>,
    w_i: DMatrix<f64>,
    t_i: DMatrix<f64>,
}

impl Projection {
    fn assemble(&self, sys: &SystemMatrices) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let w = hcat(&self.w_p, &self.w_i);
        let t = hcat(&self.t_p, &self.t_i);
        let e_r = w.transpose() * sparse::mul(&sys.e, &t);
        let a_r = w.transpose() * sparse::mul(&sys.a, &t);
        (e_r, a_r, w.transpose() * &sys.b, &sys.c * t)
    }
}

/// Largest deviation of `(E_R, A_R)` from `blkdiag(I, N_R)`, `blkdiag(J_R, I)`.
pub fn block_structure_defect(e_r: &DMatrix<f64>, a_r: &DMatrix<f64>, r_p: usize) -> f64 {
    let r = e_r.nrows();
    let ri = r - r_p;
    let scale = a_r.norm().max(e_r.norm()).max(1.0);
    let mut d: f64 = 0.0;
    for m in [e_r, a_r] {
        d = d.max(m.view((0, r_p), (r_p, ri)).norm());
        d = d.max(m.view((r_p, 0), (ri, r_p)).norm());
    }
    d = d.max((e_r.view((0, 0), (r_p, r_p)) - DMatrix::<f64>::identity(r_p, r_p)).norm());
    d = d.max((a_r.view((r_p, r_p), (ri, ri)) - DMatrix::<f64>::identity(ri, ri)).norm());
    d / scale
}

/// Replaces roundoff in the reduced pencil by the structure it is known to
/// have: zero coupling blocks, `A_ii = I` and an exactly nilpotent `N_R` in
/// its real Schur basis. Without this, `C_i N_R^2 B_i ~ eps` shows up as a
/// spurious `s^2` term at high frequency.
fn exact_block_structure(e_r: &mut DMatrix<f64>, a_r: &mut DMatrix<f64>, b_r: &mut DMatrix<f64>, c_r: &mut DMatrix<f64>, rp: usize) {
    let r = e_r.nrows();
    let ri = r - rp;
    if ri == 0 {
        return;
    }
    for m in [&mut *e_r, &mut *a_r] {
        m.view_mut((0, rp), (rp, ri)).fill(0.0);
        m.view_mut((rp, 0), (ri, rp)).fill(0.0);
    }
    a_r.view_mut((rp, rp), (ri, ri)).fill_with_identity();
    let n = e_r.view((rp, rp), (ri, ri)).into_owned();
    let Some(q) = nilpotent_staircase(&n) else {
        log::warn!("reduced improper block is not nilpotent to working accuracy; left as computed");
        return;
    };
    let mut t = q.transpose() * &n * &q;
    t.fill_lower_triangle(0.0, 0);
    e_r.view_mut((rp, rp), (ri, ri)).copy_from(&t);
    let bi = q.transpose() * b_r.rows(rp, ri);
    b_r.rows_mut(rp, ri).copy_from(&bi);
    let ci = c_r.columns(rp, ri) * &q;
    c_r.columns_mut(rp, ri).copy_from(&ci);
}

/// Orthogonal `Q` such that `Q^T N Q` is strictly upper triangular up to
/// roundoff, built from successive kernels; `None` if `N` is not nilpotent.
fn nilpotent_staircase(n: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let m = n.nrows();
    // the partner block A_ii is the identity, which fixes the scale
    let tol = NILPOTENT_TOL * n.norm().max(1.0);
    let mut q = DMatrix::<f64>::identity(m, m);
    let mut start = 0;
    while start < m {
        let rest = q.columns(start, m - start).into_owned();
        let y = rest.transpose() * n * &rest;
        if y.norm() <= tol {
            break;
        }
        let f = svd(y, false, true);
        let v_t = f.v_t?;
        let (ker, range): (Vec<usize>, Vec<usize>) = (0..m - start).partition(|&j| f.singular_values[j] <= tol);
        if ker.is_empty() {
            return None;
        }
        let order: Vec<usize> = ker.iter().chain(&range).copied().collect();
        let v = DMatrix::from_fn(m - start, m - start, |i, j| v_t[(order[j], i)]);
        q.columns_mut(start, m - start).copy_from(&(rest * v));
        start += ker.len();
    }
    Some(q)
}

/// Balances and truncates. `s_*` are observability factors and `r_*`
/// controllability factors; improper factors may have zero columns.
pub fn build_rom(
    sys: &SystemMatrices,
    ctx: &ProjectorContext,
    s_p: &DMatrix<f64>,
    r_p: &DMatrix<f64>,
    s_i: &DMatrix<f64>,
    r_i: &DMatrix<f64>,
    rule: TruncationRule,
) -> Result<Rom> {
    rule.validate()?;
    let prop = proper_svd(s_p, r_p, &sys.e)?;
    let imp = improper_svd(s_i, r_i, &sys.a)?;
    let s1 = prop.sigma.first().copied().unwrap_or(0.0);
    let rank = prop.sigma.iter().take_while(|s| **s > PROPER_RANK_TOL * s1 && **s > 0.0).count();
    let wanted = rule.order(&prop.sigma).min(rank);
    let rp = nondegenerate_cut(&prop.sigma, wanted)?;
    if rp != wanted {
        log::info!("truncation order moved from {wanted} to {rp} to avoid a degenerate Hankel cut");
    }
    let ri = imp.sigma.len();
    let sig_p = &prop.sigma[..rp];
    let mut proj = Projection {
        w_p: scaled(s_p, &prop.u.columns(0, rp).into_owned(), sig_p),
        t_p: scaled(r_p, &prop.v.columns(0, rp).into_owned(), sig_p),
        w_i: scaled(s_i, &imp.u, &imp.sigma),
        t_i: scaled(r_i, &imp.v, &imp.sigma),
    };
    let (mut e_r, mut a_r, mut b_r, mut c_r) = proj.assemble(sys);
    let mut defect = block_structure_defect(&e_r, &a_r, rp);
    if defect > STRUCTURE_TOL {
        log::warn!("reduced block structure defect {defect:e}; re-projecting the balancing bases");
        let dual = ctx.transposed();
        proj.t_p = ctx.apply_right(&proj.t_p)?;
        proj.w_p = dual.apply_right(&proj.w_p)?;
        proj.t_i = ctx.apply_right_complement(&proj.t_i)?;
        proj.w_i = dual.apply_right_complement(&proj.w_i)?;
        (e_r, a_r, b_r, c_r) = proj.assemble(sys);
        defect = block_structure_defect(&e_r, &a_r, rp);
        if defect > STRUCTURE_TOL {
            log::warn!("block structure defect {defect:e} persists after re-projection");
        }
    }
    if defect <= STRUCTURE_TOL {
        exact_block_structure(&mut e_r, &mut a_r, &mut b_r, &mut c_r, rp);
    }
    let rom = Rom {
        e_r,
        a_r,
        b_r,
        c_r,
        r_p: rp,
        r_i: ri,
        proper_hankel: prop.sigma.clone(),
        improper_hankel: imp.sigma.clone(),
        mu: ctx.mu().to_vec(),
        structure_defect: defect,
    };
    if !rom.is_stable() {
        log::warn!("reduced differential block has eigenvalues outside the open left half-plane");
    }
    Ok(rom)
}

impl Rom {
    pub fn order(&self) -> usize {
        self.e_r.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b_r.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c_r.nrows()
    }

    pub fn j_r(&self) -> DMatrix<f64> {
        self.a_r.view((0, 0), (self.r_p, self.r_p)).into_owned()
    }

    pub fn n_r(&self) -> DMatrix<f64> {
        let ri = self.order() - self.r_p;
        self.e_r.view((self.r_p, self.r_p), (ri, ri)).into_owned()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        if self.r_p == 0 {
            return Vec::new();
        }
        let j = self.j_r();
        let ep = self.e_r.view((0, 0), (self.r_p, self.r_p)).into_owned();
        let m = ep.lu().solve(&j).unwrap_or(j);
        m.complex_eigenvalues().iter().copied().collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|l| l.re < 0.0)
    }

    /// Error bound for the proper block.
    pub fn error_bound(&self) -> f64 {
        bt_error_bound(&self.proper_hankel, self.r_p)
    }

    pub fn transfer(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let pencil = to_complex(&self.e_r) * s - to_complex(&self.a_r);
        let x = pencil.lu().solve(&to_complex(&self.b_r)).ok_or_else(|| Error::Singular(format!("s E_R - A_R singular at s = {s}")))?;
        Ok(to_complex(&self.c_r) * x)
    }

    pub fn sigma_max(&self, omega: f64) -> Result<f64> {
        Ok(sigma_max(&self.transfer(Complex64::new(0.0, omega))?))
    }

    /// The ROM as a parameter-free system, for the standard bundle format.
    pub fn to_system(&self) -> Result<ParametricDaeSystem> {
        let index = if self.r_i == 0 {
            0
        } else {
            let n = self.n_r();
            let mut p = DMatrix::identity(n.nrows(), n.nrows());
            let mut k = 0;
            while p.norm() > 1e-12 && k <= n.nrows() {
                p = &n * p;
                k += 1;
            }
            k
        };
        ParametricDaeSystem::from_dense(&self.e_r, &self.a_r, &self.b_r, &self.c_r, index)
    }
}

/// `max_j sigma_max(G(i w_j) - G_R(i w_j))` over the given frequencies.
pub fn sampled_error(sys: &SystemMatrices, rom: &Rom, omegas: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &w in omegas {
        let s = Complex64::new(0.0, w);
        let d = sys.transfer_function(s)? - rom.transfer(s)?;
        worst = worst.max(sigma_max(&d));
    }
    Ok(worst)
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..count).map(|k| 10f64.powf(a + (b - a) * k as f64 / (count - 1) as f64)).collect()
}
