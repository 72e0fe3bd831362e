//! Affine parametric descriptor systems `E(mu) z' = A(mu) z + B(mu) u`,
//! `y = C(mu) z`, and their transfer functions.

pub mod bundle;
pub mod operator;
pub mod smw;
pub mod theta;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sparse::{self, Csc};
use crate::linalg::SparseLu;

pub use operator::{AffineMatrixOperator, AffineTerm, LowRank};
pub use smw::SmwPrecomputation;
pub use theta::ThetaExpr;

/// Axis-aligned parameter box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub bounds: Vec<(f64, f64)>,
}

impl ParamBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        ParamBox { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.bounds.len()
            && mu.iter().zip(&self.bounds).all(|(m, (lo, hi))| {
                let slack = 1e-12 * (hi - lo).abs().max(1.0);
                *m >= lo - slack && *m <= hi + slack
            })
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect()
    }

    /// Tensor grid with `k` points per coordinate (midpoint when `k == 1`).
    pub fn grid(&self, k: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .bounds
            .iter()
            .map(|(lo, hi)| {
                if k <= 1 {
                    vec![0.5 * (lo + hi)]
                } else {
                    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
                }
            })
            .collect();
        let mut out = vec![Vec::new()];
        for ax in &axes {
            out = out.into_iter().flat_map(|p| ax.iter().map(move |v| [p.clone(), vec![*v]].concat())).collect();
        }
        out
    }
}

/// Structural tag telling downstream code how to slice the blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum SystemKind {
    /// `[[E, 0], [0, 0]]`, `[[A, G], [G^T, 0]]` with `n` differential and
    /// `q` algebraic unknowns.
    StokesLike { n: usize, q: usize },
    /// First-order form of `M x'' + D x' + K x = G lambda + B u`, `G^T x = 0`,
    /// state `[x; x'; lambda]`.
    Mechanical { n_x: usize, q: usize },
    /// Unstructured; only dense desk-scale tools apply.
    General,
}

#[derive(Clone, Debug)]
pub struct ParametricDaeSystem {
    pub e: AffineMatrixOperator,
    pub a: AffineMatrixOperator,
    pub b: AffineMatrixOperator,
    pub c: AffineMatrixOperator,
    pub param_box: ParamBox,
    pub kind: SystemKind,
    pub index: usize,
}

impl ParametricDaeSystem {
    pub fn new(
        e: AffineMatrixOperator,
        a: AffineMatrixOperator,
        b: AffineMatrixOperator,
        c: AffineMatrixOperator,
        param_box: ParamBox,
        kind: SystemKind,
        index: usize,
    ) -> Result<Self> {
        let n = e.nrows();
        if e.ncols() != n || a.nrows() != n || a.ncols() != n || b.nrows() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "E {}x{}, A {}x{}, B {}x{}, C {}x{}",
                e.nrows(),
                e.ncols(),
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        for op in [&e, &a, &b, &c] {
            if let Some(k) = op.max_coordinate() {
                if k >= param_box.dim() {
                    return Err(Error::Dimension(format!("theta uses coordinate {k} but box has dim {}", param_box.dim())));
                }
            }
        }
        let expect = match kind {
            SystemKind::StokesLike { n: nn, q } => Some(nn + q),
            SystemKind::Mechanical { n_x, q } => Some(2 * n_x + q),
            SystemKind::General => None,
        };
        if let Some(d) = expect {
            if d != n {
                return Err(Error::Dimension(format!("kind {kind:?} implies dimension {d}, operators have {n}")));
            }
        }
        Ok(ParametricDaeSystem { e, a, b, c, param_box, kind, index })
    }

    /// Constant dense system without parameters.
    pub fn from_dense(e: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, index: usize) -> Result<Self> {
        Self::new(
            AffineMatrixOperator::constant(sparse::from_dense(e)),
            AffineMatrixOperator::constant(sparse::from_dense(a)),
            AffineMatrixOperator::constant(sparse::from_dense(b)),
            AffineMatrixOperator::constant(sparse::from_dense(c)),
            ParamBox::new(vec![]),
            SystemKind::General,
            index,
        )
    }

    pub fn n_state(&self) -> usize {
        self.e.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn check_param(&self, mu: &[f64]) -> Result<()> {
        if mu.len() != self.param_box.dim() {
            return Err(Error::Dimension(format!("parameter has {} entries, box has {}", mu.len(), self.param_box.dim())));
        }
        if !self.param_box.contains(mu) {
            return Err(Error::Domain { mu: mu.to_vec() });
        }
        Ok(())
    }

    /// Evaluates all four operators at `mu`.
    pub fn at(&self, mu: &[f64]) -> Result<SystemMatrices> {
        self.check_param(mu)?;
        Ok(SystemMatrices {
            e: self.e.evaluate(mu),
            a: self.a.evaluate(mu),
            b: self.b.evaluate_dense(mu),
            c: self.c.evaluate_dense(mu),
        })
    }

    pub fn transfer_function(&self, mu: &[f64], s: Complex64) -> Result<DMatrix<Complex64>> {
        self.at(mu)?.transfer_function(s)
    }
}

/// Operators evaluated at one parameter.
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub e: Csc,
    pub a: Csc,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    /// `C (s E - A)^{-1} B` through a sparse factorization.
    pub fn transfer_function(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.n();
        let k = sparse::lincomb(n, n, &[(s, &self.e), (Complex64::new(-1.0, 0.0), &self.a)]);
        let lu = SparseLu::factor(&k).map_err(|e| match e {
            Error::Singular(m) => Error::Singular(format!("s = {s} is a pencil eigenvalue ({m})")),
            other => other,
        })?;
        let b = self.b.map(|v| Complex64::new(v, 0.0));
        let mut x = lu.solve(&b);
        // one refinement step; saddle-point pencils are badly conditioned
        let r = b - (sparse::mul(&self.e, &x) * s - sparse::mul(&self.a, &x));
        x += lu.solve(&r);
        Ok(self.c.map(|v| Complex64::new(v, 0.0)) * x)
    }

    pub fn dual(&self) -> SystemMatrices {
        SystemMatrices { e: self.e.transpose(), a: self.a.transpose(), b: self.c.transpose(), c: self.b.transpose() }
    }
}

/// Largest singular value of each sample, typically of `G(i w)` or of an error.
pub fn sigma_max(g: &DMatrix<Complex64>) -> f64 {
    crate::linalg::dense::singular_values(g).first().copied().unwrap_or(0.0)
}
