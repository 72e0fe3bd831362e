//! Implicit spectral projectors evaluated at one parameter.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::structure::StokesStructure;
use crate::error::{Error, Result};
use crate::linalg::dense::rmul;
use crate::linalg::sparse::{self, Csc};
use crate::linalg::{Field, SparseCholesky};

const IDEMPOTENCY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
struct Structured {
    n: usize,
    q: usize,
    e: Csc,
    a: Csc,
    g: Csc,
    e_chol: Arc<SparseCholesky>,
    s_inv: DMatrix<f64>,
    // E^{-1} G
    eg: DMatrix<f64>,
    // G S^{-1}
    gs: DMatrix<f64>,
    // E^{-1} G S^{-1}
    egs: DMatrix<f64>,
    // A E^{-1} G S^{-1} and A^T E^{-1} G S^{-1}
    a_egs: DMatrix<f64>,
    at_egs: DMatrix<f64>,
}

#[derive(Clone, Debug)]
enum Inner {
    Structured(Structured),
    Dense { left: DMatrix<f64>, right: DMatrix<f64> },
}

/// Applies `Pi_l(mu)` and `Pi_r(mu)` to dense blocks without forming them.
#[derive(Clone, Debug)]
pub struct ProjectorContext {
    mu: Vec<f64>,
    transposed: bool,
    inner: Inner,
}

impl ProjectorContext {
    /// Projectors of a Stokes-like structure at `mu`.
    pub fn stokes(st: &StokesStructure, mu: &[f64]) -> Result<Self> {
        st.validate()?;
        if !st.param_box.contains(mu) {
            return Err(Error::Domain { mu: mu.to_vec() });
        }
        let (n, q) = (st.n(), st.q());
        let e = st.e.evaluate(mu);
        let a = st.a.evaluate(mu);
        let g = st.g.evaluate(mu);
        let e_chol = SparseCholesky::factor(&e).map_err(|err| Error::Definiteness(format!("E(mu) is not positive definite: {err}")))?;
        let gd = sparse::to_dense(&g);
        let eg = e_chol.solve(&gd);
        let s = gd.transpose() * &eg;
        let s = (&s + s.transpose()) * 0.5;
        let s_inv = match s.clone().cholesky() {
            Some(c) => c.inverse(),
            None if q == 0 => DMatrix::zeros(0, 0),
            None => return Err(Error::Definiteness("Schur complement G^T E^-1 G is not positive definite".into())),
        };
        let gs = &gd * &s_inv;
        let egs = &eg * &s_inv;
        let a_egs = sparse::mul(&a, &egs);
        let at_egs = sparse::tr_mul(&a, &egs);
        let ctx = ProjectorContext {
            mu: mu.to_vec(),
            transposed: false,
            inner: Inner::Structured(Structured { n, q, e, a, g, e_chol: Arc::new(e_chol), s_inv, eg, gs, egs, a_egs, at_egs }),
        };
        ctx.check_idempotent()?;
        Ok(ctx)
    }

    /// Projectors supplied as explicit dense matrices (small systems).
    pub fn dense(mu: &[f64], left: DMatrix<f64>, right: DMatrix<f64>) -> Result<Self> {
        if !left.is_square() || left.shape() != right.shape() {
            return Err(Error::Dimension(format!("projectors {:?} and {:?}", left.shape(), right.shape())));
        }
        let ctx = ProjectorContext { mu: mu.to_vec(), transposed: false, inner: Inner::Dense { left, right } };
        ctx.check_idempotent()?;
        Ok(ctx)
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Full state dimension `N`.
    pub fn dim(&self) -> usize {
        match &self.inner {
            Inner::Structured(s) => s.n + s.q,
            Inner::Dense { left, .. } => left.nrows(),
        }
    }

    pub fn is_structured(&self) -> bool {
        matches!(self.inner, Inner::Structured(_))
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    /// Projectors of the dual pencil `(E^T, A^T)`: the left projector becomes
    /// `Pi_r^T` and the right one `Pi_l^T`.
    pub fn transposed(&self) -> Self {
        let inner = match &self.inner {
            Inner::Structured(s) => {
                let mut t = s.clone();
                t.a = s.a.transpose();
                std::mem::swap(&mut t.a_egs, &mut t.at_egs);
                Inner::Structured(t)
            }
            Inner::Dense { left, right } => Inner::Dense { left: right.transpose(), right: left.transpose() },
        };
        ProjectorContext { mu: self.mu.clone(), transposed: !self.transposed, inner }
    }

    fn check_shape<T>(&self, x: &DMatrix<T>) -> Result<()> {
        if x.nrows() != self.dim() {
            return Err(Error::Dimension(format!("block has {} rows, projector acts on {}", x.nrows(), self.dim())));
        }
        Ok(())
    }

    /// `Pi_l(mu) X`.
    pub fn apply_left<T: Field>(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_shape(x)?;
        Ok(match &self.inner {
            Inner::Dense { left, .. } => rmul(left, x),
            Inner::Structured(s) => {
                let k = x.ncols();
                let mut t = x.rows(0, s.n).into_owned();
                if s.q > 0 {
                    t -= rmul(&s.a_egs, &x.rows(s.n, s.q).into_owned());
                }
                let pt = s.pi(&t);
                let mut out = DMatrix::zeros(s.n + s.q, k);
                out.rows_mut(0, s.n).copy_from(&pt);
                out
            }
        })
    }

    /// `Pi_r(mu) X`.
    pub fn apply_right<T: Field>(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_shape(x)?;
        Ok(match &self.inner {
            Inner::Dense { right, .. } => rmul(right, x),
            Inner::Structured(s) => {
                let y = s.pi_t(&x.rows(0, s.n).into_owned());
                let mut out = DMatrix::zeros(s.n + s.q, x.ncols());
                if s.q > 0 {
                    let lam = -rmul(&s.at_egs.transpose(), &y);
                    out.rows_mut(s.n, s.q).copy_from(&lam);
                }
                out.rows_mut(0, s.n).copy_from(&y);
                out
            }
        })
    }

    /// `(I - Pi_r) X`.
    pub fn apply_right_complement<T: Field>(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(x - self.apply_right(x)?)
    }

    /// `(I - Pi_l) X`.
    pub fn apply_left_complement<T: Field>(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        Ok(x - self.apply_left(x)?)
    }

    /// Dense `Pi_l`, for desk-scale checks.
    pub fn dense_left(&self) -> DMatrix<f64> {
        self.apply_left(&DMatrix::identity(self.dim(), self.dim())).expect("square identity")
    }

    pub fn dense_right(&self) -> DMatrix<f64> {
        self.apply_right(&DMatrix::identity(self.dim(), self.dim())).expect("square identity")
    }

    /// Differential block data `(n, q, E, A, G)` when structured.
    pub fn blocks(&self) -> Option<(usize, usize, &Csc, &Csc, &Csc)> {
        match &self.inner {
            Inner::Structured(s) => Some((s.n, s.q, &s.e, &s.a, &s.g)),
            Inner::Dense { .. } => None,
        }
    }

    /// `Pi(mu)` on differential-block vectors (structured contexts only).
    pub fn apply_pi<T: Field>(&self, x: &DMatrix<T>) -> Option<DMatrix<T>> {
        match &self.inner {
            Inner::Structured(s) => Some(s.pi(x)),
            Inner::Dense { .. } => None,
        }
    }

    /// `E(mu)^{-1} X` on the differential block (structured contexts only).
    pub fn solve_e<T: Field>(&self, x: &DMatrix<T>) -> Option<DMatrix<T>> {
        match &self.inner {
            Inner::Structured(s) => Some(s.e_chol.solve(x)),
            Inner::Dense { .. } => None,
        }
    }

    /// `(G^T E^{-1} G)^{-1} G^T E^{-1} A` applied to `X` (structured only).
    pub fn lambda_map<T: Field>(&self, x: &DMatrix<T>) -> Option<DMatrix<T>> {
        match &self.inner {
            Inner::Structured(s) => Some(rmul(&s.at_egs.transpose(), x)),
            Inner::Dense { .. } => None,
        }
    }

    /// `(G^T E^{-1} G)^{-1}` (structured only).
    pub fn schur_inverse(&self) -> Option<&DMatrix<f64>> {
        match &self.inner {
            Inner::Structured(s) => Some(&s.s_inv),
            Inner::Dense { .. } => None,
        }
    }

    fn check_idempotent(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Ok(());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let v = DMatrix::<f64>::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        for (name, once, twice) in [
            ("Pi_l", self.apply_left(&v)?, self.apply_left(&self.apply_left(&v)?)?),
            ("Pi_r", self.apply_right(&v)?, self.apply_right(&self.apply_right(&v)?)?),
        ] {
            let defect = (&twice - &once).norm();
            let scale = v.norm().max(once.norm());
            if defect > IDEMPOTENCY_TOL * scale {
                return Err(Error::Accuracy(format!(
                    "{name} is not idempotent at mu = {:?}: defect {defect:e} relative to {scale:e}",
                    self.mu
                )));
            }
        }
        Ok(())
    }
}

impl Structured {
    // Pi x = x - G S^{-1} G^T E^{-1} x
    fn pi<T: Field>(&self, x: &DMatrix<T>) -> DMatrix<T> {
        if self.q == 0 {
            return x.clone();
        }
        x - rmul(&self.gs, &rmul(&self.eg.transpose(), x))
    }

    // Pi^T x = x - E^{-1} G S^{-1} G^T x
    fn pi_t<T: Field>(&self, x: &DMatrix<T>) -> DMatrix<T> {
        if self.q == 0 {
            return x.clone();
        }
        x - rmul(&self.egs, &sparse::tr_mul(&self.g, x))
    }
}
