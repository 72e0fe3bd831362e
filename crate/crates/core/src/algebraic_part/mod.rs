//! Polynomial part of the transfer function: Markov parameters from
//! high-frequency samples and their realization as a nilpotent DAE block.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::balanced_truncation::Rom;
use crate::error::{Error, Result};
use crate::linalg::dense::{re, svd};
use crate::param_system::SystemMatrices;

pub const DEFAULT_RANK_TOL: f64 = 1e-10;
/// Index 1 and 2 read `M_0` from `Re G`, which sits under `omega ||M_1||`
/// and loses `eps omega ||M_1||` with it. Two extrapolation levels leave
/// `O(omega^-6)` of the proper part, so a moderate frequency suffices.
pub const OMEGA_FACTOR: f64 = 1e2;
/// Index 3 recovers `M_0` as `Re G + omega^2 M_2`, which loses
/// `eps * omega^2 ||M_2||` to cancellation while the proper part contributes
/// `O(omega^-2)`; the two balance near `eps^{-1/4}`.
pub const OMEGA_FACTOR_INDEX3: f64 = 1e4;
pub const CONSISTENCY_TOL: f64 = 1e-4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MarkovSet {
    /// `M_0, ..., M_{nu-1}`.
    pub matrices: Vec<DMatrix<f64>>,
    pub omegas: Vec<f64>,
    /// Per-matrix contamination estimate from re-extraction at `4 omega_base`,
    /// relative to `||G(i omega_base)||`.
    pub contamination: Vec<f64>,
}

impl MarkovSet {
    pub fn from_matrices(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        if matrices.is_empty() || matrices.len() > 3 {
            return Err(Error::Unsupported(format!("{} Markov parameters; 1 to 3 supported", matrices.len())));
        }
        let shape = matrices[0].shape();
        if matrices.iter().any(|m| m.shape() != shape || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invalid("Markov parameters must be finite and of equal shape".into()));
        }
        let n = matrices.len();
        Ok(MarkovSet { matrices, omegas: Vec::new(), contamination: vec![0.0; n] })
    }

    pub fn nu(&self) -> usize {
        self.matrices.len()
    }

    pub fn polynomial(&self, s: Complex64) -> DMatrix<Complex64> {
        let (p, m) = self.matrices[0].shape();
        let mut out = DMatrix::<Complex64>::zeros(p, m);
        let mut sk = Complex64::new(1.0, 0.0);
        for mk in &self.matrices {
            out += mk.map(|v| Complex64::new(v, 0.0) * sk);
            sk *= s;
        }
        out
    }
}

fn raw_markov(nu: usize, w: f64, g: &mut dyn FnMut(f64) -> Result<DMatrix<Complex64>>) -> Result<Vec<DMatrix<f64>>> {
    let g1 = g(w)?;
    let im = |x: &DMatrix<Complex64>| x.map(|v| v.im);
    Ok(match nu {
        1 | 2 => {
            // the proper part enters both as even powers of 1/omega; two
            // extrapolation levels over (omega, 2 omega, 4 omega) cancel
            // the omega^-2 and omega^-4 terms
            let (g2, g4) = (g(2.0 * w)?, g(4.0 * w)?);
            let extrapolate = |f: &dyn Fn(&DMatrix<Complex64>, f64) -> DMatrix<f64>| {
                (f(&g4, 4.0 * w) * 64.0 - f(&g2, 2.0 * w) * 20.0 + f(&g1, w)) / 45.0
            };
            let mut out = vec![extrapolate(&|x, _| re(x))];
            if nu == 2 {
                out.push(extrapolate(&|x, v| im(x) / v));
            }
            out
        }
        3 => {
            let w2 = 2.0 * w;
            let g2 = g(w2)?;
            let m2 = (re(&g1) - re(&g2)) / (w2 * w2 - w * w);
            let m0 = re(&g1) + &m2 * (w * w);
            vec![m0, im(&g1) / w, m2]
        }
        _ => return Err(Error::Unsupported(format!("index {nu}; Markov extraction supports 1 to 3"))),
    })
}

/// Extraction from samples `omega -> G(i omega)`.
pub fn estimate_markov_with(
    nu: usize,
    omega_base: f64,
    mut g: impl FnMut(f64) -> Result<DMatrix<Complex64>>,
) -> Result<MarkovSet> {
    if !(omega_base > 0.0 && omega_base.is_finite()) {
        return Err(Error::Invalid(format!("omega_base must be positive, got {omega_base}")));
    }
    let scale = crate::param_system::sigma_max(&g(omega_base)?);
    let base = raw_markov(nu, omega_base, &mut g)?;
    let check = raw_markov(nu, 4.0 * omega_base, &mut g)?;
    let mut contamination = Vec::with_capacity(nu);
    for (k, (a, b)) in base.iter().zip(&check).enumerate() {
        let d = (a - b).norm() * omega_base.powi(k as i32);
        contamination.push(if scale > 0.0 { d / scale } else { d });
    }
    let worst = contamination.iter().cloned().fold(0.0, f64::max);
    if worst > CONSISTENCY_TOL {
        log::warn!(
            "Markov extraction inconsistent at omega_base = {omega_base:e} (relative {worst:e}); try omega_base >= {:e}",
            omega_base * 10.0
        );
    }
    let mut omegas = vec![omega_base];
    if nu <= 2 {
        omegas.extend([2.0 * omega_base, 4.0 * omega_base]);
    } else {
        omegas.push(2.0 * omega_base);
    }
    Ok(MarkovSet { matrices: base, omegas, contamination })
}

/// Extraction from the full-order transfer function at one parameter.
pub fn estimate_markov(sys: &SystemMatrices, nu: usize, omega_base: f64) -> Result<MarkovSet> {
    estimate_markov_with(nu, omega_base, |w| sys.transfer_function(Complex64::new(0.0, w)))
}

pub fn default_omega_base(spectral_scale: f64, nu: usize) -> f64 {
    if nu >= 3 {
        OMEGA_FACTOR_INDEX3 * spectral_scale
    } else {
        OMEGA_FACTOR * spectral_scale
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolynomialBlock {
    pub degree: usize,
    pub rank: usize,
    pub e: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Block-diagonal realization `C (s E - I)^{-1} B` of `sum_k M_k s^k`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolynomialRealization {
    pub blocks: Vec<PolynomialBlock>,
    pub e: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub feedthrough: DMatrix<f64>,
}

fn compact_svd(m: &DMatrix<f64>, rank_tol: f64) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let s = svd(m.clone(), true, true);
    let smax = s.singular_values.iter().cloned().fold(0.0, f64::max);
    let r = s.singular_values.iter().filter(|v| **v > rank_tol * smax && **v > 0.0).count();
    let u = s.u.unwrap().columns(0, r).into_owned();
    let v = s.v_t.unwrap().rows(0, r).transpose();
    (u, s.singular_values.iter().take(r).copied().collect(), v)
}

/// Degree-`k` block with `k + 1` block rows and `Sigma^{1/k}` on the block
/// superdiagonal, so that `-C E^k B = M_k`.
fn degree_block(k: usize, mk: &DMatrix<f64>, rank_tol: f64) -> PolynomialBlock {
    let (p, m) = mk.shape();
    let (u, sig, v) = compact_svd(mk, rank_tol);
    let r = sig.len();
    let nb = (k + 1) * r;
    let mut e = DMatrix::zeros(nb, nb);
    for blk in 0..k {
        for i in 0..r {
            e[(blk * r + i, (blk + 1) * r + i)] = sig[i].powf(1.0 / k as f64);
        }
    }
    let mut b = DMatrix::zeros(nb, m);
    if r > 0 {
        b.rows_mut(k * r, r).copy_from(&v.transpose());
    }
    let mut c = DMatrix::zeros(p, nb);
    if r > 0 {
        c.columns_mut(0, r).copy_from(&(-u));
    }
    PolynomialBlock { degree: k, rank: r, e, b, c }
}

pub fn realize_polynomial(markov: &MarkovSet, rank_tol: f64) -> Result<PolynomialRealization> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::Invalid(format!("rank_tol must lie in (0, 1), got {rank_tol}")));
    }
    let (p, m) = markov.matrices[0].shape();
    let blocks: Vec<PolynomialBlock> =
        markov.matrices.iter().enumerate().skip(1).map(|(k, mk)| degree_block(k, mk, rank_tol)).collect();
    let n: usize = blocks.iter().map(|b| b.e.nrows()).sum();
    let mut e = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut c = DMatrix::zeros(p, n);
    let mut off = 0;
    for blk in &blocks {
        let nb = blk.e.nrows();
        e.view_mut((off, off), (nb, nb)).copy_from(&blk.e);
        b.rows_mut(off, nb).copy_from(&blk.b);
        c.columns_mut(off, nb).copy_from(&blk.c);
        off += nb;
    }
    Ok(PolynomialRealization { blocks, e, b, c, feedthrough: markov.matrices[0].clone() })
}

impl PolynomialRealization {
    pub fn order(&self) -> usize {
        self.e.nrows()
    }

    /// `C (s E - I)^{-1} B + M_0`, evaluated through the finite Neumann sum.
    pub fn transfer(&self, s: Complex64) -> DMatrix<Complex64> {
        let n = self.order();
        let c = self.c.map(|v| Complex64::new(v, 0.0));
        let e = self.e.map(|v| Complex64::new(v, 0.0) * s);
        let mut x = self.b.map(|v| Complex64::new(v, 0.0));
        let mut acc = DMatrix::<Complex64>::zeros(n, x.ncols());
        for _ in 0..=n {
            acc += &x;
            x = &e * x;
        }
        -(c * acc) + self.feedthrough.map(|v| Complex64::new(v, 0.0))
    }

    /// Smallest `k` with `E^k = 0`.
    pub fn nilpotency_index(&self) -> usize {
        let n = self.order();
        let mut p = DMatrix::<f64>::identity(n, n);
        for k in 0..=n {
            if p.iter().all(|v| *v == 0.0) {
                return k;
            }
            p = &self.e * p;
        }
        n + 1
    }
}

/// Appends the algebraic realization (and `M_0` as a block with `E = 0`,
/// `A = I`) after the proper ROM block.
pub fn combine_rom(proper: &Rom, alg: &PolynomialRealization) -> Result<Rom> {
    let (p, m) = alg.feedthrough.shape();
    if proper.n_inputs() != m || proper.n_outputs() != p {
        return Err(Error::Dimension(format!(
            "ROM is {}x{}, polynomial part is {p}x{m}",
            proper.n_outputs(),
            proper.n_inputs()
        )));
    }
    let (u0, s0, v0) = compact_svd(&alg.feedthrough, DEFAULT_RANK_TOL);
    let r0 = s0.len();
    let nr = proper.order();
    let na = alg.order();
    let n = nr + na + r0;
    let mut e = DMatrix::zeros(n, n);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut c = DMatrix::zeros(p, n);
    e.view_mut((0, 0), (nr, nr)).copy_from(&proper.e_r);
    a.view_mut((0, 0), (nr, nr)).copy_from(&proper.a_r);
    b.rows_mut(0, nr).copy_from(&proper.b_r);
    c.columns_mut(0, nr).copy_from(&proper.c_r);
    e.view_mut((nr, nr), (na, na)).copy_from(&alg.e);
    a.view_mut((nr, nr), (na + r0, na + r0)).fill_with_identity();
    b.rows_mut(nr, na).copy_from(&alg.b);
    c.columns_mut(nr, na).copy_from(&alg.c);
    if r0 > 0 {
        // C (0 - I)^{-1} B = -C B = M_0
        let mut us = u0;
        for (j, s) in s0.iter().enumerate() {
            us.column_mut(j).scale_mut(-*s);
        }
        b.rows_mut(nr + na, r0).copy_from(&v0.transpose());
        c.columns_mut(nr + na, r0).copy_from(&us);
    }
    Ok(Rom {
        e_r: e,
        a_r: a,
        b_r: b,
        c_r: c,
        r_p: proper.r_p,
        r_i: n - proper.r_p,
        proper_hankel: proper.proper_hankel.clone(),
        improper_hankel: proper.improper_hankel.clone(),
        mu: proper.mu.clone(),
        structure_defect: proper.structure_defect,
    })
}
