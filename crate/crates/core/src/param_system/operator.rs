//! Affine parameter-dependent sparse operators `M(mu) = sum_k theta_k(mu) M_k`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

use super::theta::ThetaExpr;
use crate::error::{Error, Result};
use crate::linalg::sparse::{self, Csc};

/// Low-rank factorization `M_k = U V^T`.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct AffineTerm {
    pub theta: ThetaExpr,
    pub matrix: Csc,
    pub low_rank: Option<LowRank>,
}

#[derive(Clone, Debug)]
pub struct AffineMatrixOperator {
    nrows: usize,
    ncols: usize,
    terms: Vec<AffineTerm>,
}

impl AffineMatrixOperator {
    /// Builds an operator; the first term must carry `theta = 1`.
    pub fn new(nrows: usize, ncols: usize, terms: Vec<AffineTerm>) -> Result<Self> {
        if let Some(t0) = terms.first() {
            if !t0.theta.is_one() {
                return Err(Error::Invalid("first affine term must have theta = 1".into()));
            }
        }
        for (k, t) in terms.iter().enumerate() {
            if (t.matrix.nrows(), t.matrix.ncols()) != (nrows, ncols) {
                return Err(Error::Dimension(format!(
                    "term {k} is {}x{}, expected {nrows}x{ncols}",
                    t.matrix.nrows(),
                    t.matrix.ncols()
                )));
            }
            if let Some(lr) = &t.low_rank {
                check_low_rank(&t.matrix, lr).map_err(|e| Error::Invalid(format!("term {k}: {e}")))?;
            }
        }
        Ok(AffineMatrixOperator { nrows, ncols, terms })
    }

    pub fn constant(m: Csc) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        AffineMatrixOperator { nrows: r, ncols: c, terms: vec![AffineTerm { theta: ThetaExpr::One, matrix: m, low_rank: None }] }
    }

    /// Constant term plus `(theta, matrix)` pairs.
    pub fn from_pairs(m0: Csc, rest: Vec<(ThetaExpr, Csc)>) -> Result<Self> {
        let (r, c) = (m0.nrows(), m0.ncols());
        let mut terms = vec![AffineTerm { theta: ThetaExpr::One, matrix: m0, low_rank: None }];
        terms.extend(rest.into_iter().map(|(theta, matrix)| AffineTerm { theta, matrix, low_rank: None }));
        Self::new(r, c, terms)
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self::constant(Csc::zeros(nrows, ncols))
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn terms(&self) -> &[AffineTerm] {
        &self.terms
    }

    pub fn terms_mut(&mut self) -> &mut [AffineTerm] {
        &mut self.terms
    }

    pub fn max_coordinate(&self) -> Option<usize> {
        self.terms.iter().filter_map(|t| t.theta.max_coordinate()).max()
    }

    pub fn thetas(&self, mu: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.theta.eval(mu)).collect()
    }

    pub fn evaluate(&self, mu: &[f64]) -> Csc {
        let th = self.thetas(mu);
        let pairs: Vec<(f64, &Csc)> = th.iter().copied().zip(self.terms.iter().map(|t| &t.matrix)).collect();
        sparse::lincomb(self.nrows, self.ncols, &pairs)
    }

    pub fn evaluate_dense(&self, mu: &[f64]) -> DMatrix<f64> {
        sparse::to_dense(&self.evaluate(mu))
    }

    /// True when every term other than the constant one has low-rank factors.
    pub fn has_low_rank_terms(&self) -> bool {
        self.terms.iter().skip(1).all(|t| t.low_rank.is_some())
    }

    /// Attaches factors `M_k = U V^T` computed from a dense SVD (desk scale).
    pub fn attach_low_rank_factors(&mut self, rtol: f64) {
        for t in self.terms.iter_mut().skip(1) {
            let d = sparse::to_dense(&t.matrix);
            let svd = crate::linalg::dense::svd(d, true, true);
            let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
            let r = svd.singular_values.iter().filter(|&&s| s > rtol * smax).count();
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut uu = u.columns(0, r).into_owned();
            for j in 0..r {
                uu.column_mut(j).scale_mut(svd.singular_values[j]);
            }
            t.low_rank = Some(LowRank { u: uu, v: vt.rows(0, r).transpose() });
        }
    }

    /// `[M_0^T, ...]` termwise transpose.
    pub fn transpose(&self) -> Self {
        AffineMatrixOperator {
            nrows: self.ncols,
            ncols: self.nrows,
            terms: self
                .terms
                .iter()
                .map(|t| AffineTerm {
                    theta: t.theta.clone(),
                    matrix: t.matrix.transpose(),
                    low_rank: t.low_rank.as_ref().map(|lr| LowRank { u: lr.v.clone(), v: lr.u.clone() }),
                })
                .collect(),
        }
    }

    /// Merges terms with identical coefficient functions (constant term stays first).
    pub fn merged(terms: Vec<(ThetaExpr, Csc)>, nrows: usize, ncols: usize) -> Result<Self> {
        let mut out: Vec<(ThetaExpr, Csc)> = vec![(ThetaExpr::One, Csc::zeros(nrows, ncols))];
        for (th, m) in terms {
            if let Some(slot) = out.iter_mut().find(|(t, _)| *t == th) {
                slot.1 = sparse::lincomb(nrows, ncols, &[(1.0, &slot.1), (1.0, &m)]);
            } else {
                out.push((th, m));
            }
        }
        Self::new(nrows, ncols, out.into_iter().map(|(theta, matrix)| AffineTerm { theta, matrix, low_rank: None }).collect())
    }
}

fn check_low_rank(m: &Csc, lr: &LowRank) -> std::result::Result<(), String> {
    if lr.u.nrows() != m.nrows() || lr.v.nrows() != m.ncols() || lr.u.ncols() != lr.v.ncols() {
        return Err("low-rank factor shapes".into());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = DMatrix::from_fn(m.ncols(), 2, |_, _| rng.gen_range(-1.0..1.0));
    let lhs = sparse::mul(m, &x);
    let rhs = &lr.u * (lr.v.transpose() * &x);
    let scale = sparse::norm1(m).max(lr.u.norm() * lr.v.norm()) * x.norm();
    if (lhs - rhs).norm() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err("U V^T does not reproduce the term".into());
    }
    Ok(())
}
