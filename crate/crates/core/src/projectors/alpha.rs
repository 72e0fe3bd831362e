//! Lower bound `alpha(mu)` for the smallest singular value of the projected
//! Lyapunov operator of a strictly dissipative pencil.

use serde::{Deserialize, Serialize};

use super::structure::StokesStructure;
use crate::error::{Error, Result};
use crate::linalg::eig::{spd_lambda_min, sym_range};
use crate::linalg::sparse::{self, Csc};
use crate::param_system::AffineMatrixOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Coefficient ratios against a reference parameter.
    Affine,
    /// Extremal eigenvalues recomputed at every parameter.
    Exact,
}

#[derive(Clone, Debug)]
pub struct AlphaCache {
    pub mu_bar: Vec<f64>,
    pub mode: AlphaMode,
    pub lmin_e_bar: f64,
    pub lmin_neg_as_bar: f64,
    e: AffineMatrixOperator,
    a: AffineMatrixOperator,
    e_terms: Vec<usize>,
    a_terms: Vec<usize>,
}

fn psd(m: &Csc) -> bool {
    let (lo, hi) = sym_range(&sparse::sym_part(m));
    lo >= -1e-12 * hi.abs().max(lo.abs())
}

fn neg_sym(a: &Csc) -> Csc {
    sparse::scale(&sparse::sym_part(a), -1.0)
}

impl AlphaCache {
    /// Reference parameter defaults to the box midpoint.
    pub fn new(st: &StokesStructure, mu_bar: Option<Vec<f64>>) -> Result<Self> {
        let mu_bar = mu_bar.unwrap_or_else(|| st.param_box.midpoint());
        let e_bar = st.e.evaluate(&mu_bar);
        let a_bar = st.a.evaluate(&mu_bar);
        let lmin_e_bar = spd_lambda_min(&sparse::sym_part(&e_bar))
            .map_err(|_| Error::Definiteness(format!("E is not positive definite at the reference {mu_bar:?}")))?;
        let lmin_neg_as_bar = spd_lambda_min(&neg_sym(&a_bar))
            .map_err(|_| Error::Definiteness(format!("A is not strictly dissipative at the reference {mu_bar:?}")))?;
        let mut affine = true;
        let mut pick = |op: &AffineMatrixOperator, sign: f64| -> Vec<usize> {
            let th = op.thetas(&mu_bar);
            let mut keep = Vec::new();
            for (k, t) in op.terms().iter().enumerate() {
                if sparse::is_zero(&t.matrix) {
                    continue;
                }
                if th[k] == 0.0 || !psd(&sparse::scale(&t.matrix, sign * th[k])) {
                    affine = false;
                }
                keep.push(k);
            }
            keep
        };
        let e_terms = pick(&st.e, 1.0);
        let a_terms = pick(&st.a, -1.0);
        Ok(AlphaCache {
            mu_bar,
            mode: if affine { AlphaMode::Affine } else { AlphaMode::Exact },
            lmin_e_bar,
            lmin_neg_as_bar,
            e: st.e.clone(),
            a: st.a.clone(),
            e_terms,
            a_terms,
        })
    }

    /// Forces the per-parameter eigenvalue path.
    pub fn exact(mut self) -> Self {
        self.mode = AlphaMode::Exact;
        self
    }

    pub fn alpha(&self, mu: &[f64]) -> Result<f64> {
        match self.mode {
            AlphaMode::Exact => {
                let le = spd_lambda_min(&sparse::sym_part(&self.e.evaluate(mu)))?;
                let la = spd_lambda_min(&neg_sym(&self.a.evaluate(mu)))
                    .map_err(|_| Error::Definiteness(format!("A is not strictly dissipative at {mu:?}")))?;
                Ok(2.0 * le * la)
            }
            AlphaMode::Affine => {
                let ratio = |op: &AffineMatrixOperator, ks: &[usize]| -> Result<f64> {
                    let now = op.thetas(mu);
                    let bar = op.thetas(&self.mu_bar);
                    let mut r = f64::INFINITY;
                    for &k in ks {
                        let v = now[k] / bar[k];
                        if !(v > 0.0) || !v.is_finite() {
                            return Err(Error::Invalid(format!("alpha bound invalid: coefficient ratio {v:e} of term {k} at {mu:?}")));
                        }
                        r = r.min(v);
                    }
                    Ok(if r.is_finite() { r } else { 1.0 })
                };
                Ok(2.0 * ratio(&self.e, &self.e_terms)? * self.lmin_e_bar * ratio(&self.a, &self.a_terms)? * self.lmin_neg_as_bar)
            }
        }
    }
}

/// One-shot convenience wrapper.
pub fn alpha_lower_bound(st: &StokesStructure, mu: &[f64], mu_bar: &[f64]) -> Result<f64> {
    AlphaCache::new(st, Some(mu_bar.to_vec()))?.alpha(mu)
}
