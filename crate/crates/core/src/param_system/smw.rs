//! Parameter-independent precomputation of transfer function samples using
//! the Sherman-Morrison-Woodbury identity on low-rank affine terms.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{ParametricDaeSystem, ThetaExpr};
use crate::error::{Error, Result};
use crate::linalg::dense::{cond1, to_complex};
use crate::linalg::sparse;
use crate::linalg::SparseLu;

const THETA_FLOOR: f64 = 1e-14;
const COND_CEILING: f64 = 1e12;

#[derive(Clone, Debug)]
struct Sample {
    omega: f64,
    /// `C_i K0^{-1} B_j`
    cxb: Vec<Vec<DMatrix<Complex64>>>,
    /// `C_i K0^{-1} U`
    cxu: Vec<DMatrix<Complex64>>,
    /// `V^T K0^{-1} U`
    vxu: DMatrix<Complex64>,
    /// `V^T K0^{-1} B_j`
    vxb: Vec<DMatrix<Complex64>>,
}

/// Offline data for fast evaluation of `G(mu, i w)` at a fixed frequency list.
#[derive(Clone, Debug)]
pub struct SmwPrecomputation {
    // (is_e_term, theta, rank) for each low-rank block in U / V order
    blocks: Vec<(bool, ThetaExpr, usize)>,
    b_thetas: Vec<ThetaExpr>,
    c_thetas: Vec<ThetaExpr>,
    samples: Vec<Sample>,
}

impl SmwPrecomputation {
    /// One sparse factorization of `i w E_0 - A_0` per frequency.
    pub fn new(sys: &ParametricDaeSystem, omegas: &[f64]) -> Result<Self> {
        if !sys.e.has_low_rank_terms() || !sys.a.has_low_rank_terms() {
            return Err(Error::Unsupported("parametric E/A terms lack low-rank factors".into()));
        }
        let n = sys.n_state();
        let mut blocks = Vec::new();
        let mut ucols = Vec::new();
        let mut vcols = Vec::new();
        for (is_e, op) in [(true, &sys.e), (false, &sys.a)] {
            for t in op.terms().iter().skip(1) {
                let lr = t.low_rank.as_ref().expect("checked above");
                blocks.push((is_e, t.theta.clone(), lr.u.ncols()));
                ucols.push(lr.u.clone());
                vcols.push(lr.v.clone());
            }
        }
        let r: usize = blocks.iter().map(|b| b.2).sum();
        let mut u = DMatrix::zeros(n, r);
        let mut v = DMatrix::zeros(n, r);
        let mut off = 0;
        for (uu, vv) in ucols.iter().zip(&vcols) {
            u.columns_mut(off, uu.ncols()).copy_from(uu);
            v.columns_mut(off, vv.ncols()).copy_from(vv);
            off += uu.ncols();
        }
        let (uc, vct) = (to_complex(&u), to_complex(&v).transpose());
        let bterms: Vec<DMatrix<Complex64>> = sys.b.terms().iter().map(|t| to_complex(&sparse::to_dense(&t.matrix))).collect();
        let cterms: Vec<DMatrix<Complex64>> = sys.c.terms().iter().map(|t| to_complex(&sparse::to_dense(&t.matrix))).collect();
        let e0 = &sys.e.terms()[0].matrix;
        let a0 = &sys.a.terms()[0].matrix;
        let mut samples = Vec::with_capacity(omegas.len());
        for &w in omegas {
            let k0 = sparse::lincomb(n, n, &[(Complex64::new(0.0, w), e0), (Complex64::new(-1.0, 0.0), a0)]);
            let lu = SparseLu::factor(&k0)?;
            let xu = lu.solve(&uc);
            let xb: Vec<DMatrix<Complex64>> = bterms.iter().map(|b| lu.solve(b)).collect();
            samples.push(Sample {
                omega: w,
                cxb: cterms.iter().map(|c| xb.iter().map(|x| c * x).collect()).collect(),
                cxu: cterms.iter().map(|c| c * &xu).collect(),
                vxu: &vct * &xu,
                vxb: xb.iter().map(|x| &vct * x).collect(),
            });
        }
        Ok(SmwPrecomputation {
            blocks,
            b_thetas: sys.b.terms().iter().map(|t| t.theta.clone()).collect(),
            c_thetas: sys.c.terms().iter().map(|t| t.theta.clone()).collect(),
            samples,
        })
    }

    pub fn omegas(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.omega).collect()
    }

    /// `G(mu, i w_idx)`; `FallbackRequired` when a coefficient vanishes or the
    /// capacitance matrix is too ill-conditioned.
    pub fn eval(&self, idx: usize, mu: &[f64]) -> Result<DMatrix<Complex64>> {
        let s = &self.samples[idx];
        let r = s.vxu.nrows();
        let tb: Vec<f64> = self.b_thetas.iter().map(|t| t.eval(mu)).collect();
        let tc: Vec<f64> = self.c_thetas.iter().map(|t| t.eval(mu)).collect();
        let (p, m) = (s.cxb[0][0].nrows(), s.cxb[0][0].ncols());
        let mut g = DMatrix::<Complex64>::zeros(p, m);
        for (i, ci) in tc.iter().enumerate() {
            for (j, bj) in tb.iter().enumerate() {
                g += &s.cxb[i][j] * Complex64::new(ci * bj, 0.0);
            }
        }
        if r == 0 {
            return Ok(g);
        }
        let mut cap = s.vxu.clone();
        let mut off = 0;
        for (is_e, th, rank) in &self.blocks {
            let t = th.eval(mu);
            if t.abs() < THETA_FLOOR || (*is_e && s.omega == 0.0) {
                return Err(Error::FallbackRequired(format!("coefficient {t:e} too small for SMW")));
            }
            let w = if *is_e { Complex64::new(0.0, s.omega * t) } else { Complex64::new(-t, 0.0) };
            for k in off..off + rank {
                cap[(k, k)] += w.inv();
            }
            off += rank;
        }
        let kappa = cond1(&cap);
        if !(kappa <= COND_CEILING) {
            return Err(Error::FallbackRequired(format!("capacitance condition {kappa:e}")));
        }
        let mut y = DMatrix::<Complex64>::zeros(r, m);
        for (j, bj) in tb.iter().enumerate() {
            y += &s.vxb[j] * Complex64::new(*bj, 0.0);
        }
        let z = cap.lu().solve(&y).ok_or_else(|| Error::FallbackRequired("capacitance singular".into()))?;
        for (i, ci) in tc.iter().enumerate() {
            g -= &s.cxu[i] * &z * Complex64::new(*ci, 0.0);
        }
        Ok(g)
    }

    /// All frequencies; falls back to a direct solve where SMW is refused.
    pub fn eval_all(&self, sys: &ParametricDaeSystem, mu: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
        let mut mats = None;
        (0..self.samples.len())
            .map(|k| match self.eval(k, mu) {
                Err(Error::FallbackRequired(msg)) => {
                    log::debug!("SMW fallback at w = {}: {msg}", self.samples[k].omega);
                    if mats.is_none() {
                        mats = Some(sys.at(mu)?);
                    }
                    mats.as_ref().unwrap().transfer_function(Complex64::new(0.0, self.samples[k].omega))
                }
                other => other,
            })
            .collect()
    }
}
