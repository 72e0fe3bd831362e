//! Block structure of Stokes-like and constrained mechanical systems.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::sparse::{self, Csc};
use crate::param_system::{AffineMatrixOperator, ParamBox, ParametricDaeSystem, SystemKind, ThetaExpr};

/// `E(mu) x' = A(mu) x + G(mu) lambda + B1(mu) u`, `0 = G(mu)^T x + B2 u`,
/// `y = C1 x + C2 lambda`.
#[derive(Clone, Debug)]
pub struct StokesStructure {
    pub e: AffineMatrixOperator,
    pub a: AffineMatrixOperator,
    pub g: AffineMatrixOperator,
    pub b1: AffineMatrixOperator,
    pub b2: AffineMatrixOperator,
    pub c1: AffineMatrixOperator,
    pub c2: AffineMatrixOperator,
    pub param_box: ParamBox,
}

/// `M x'' + D x' + K x = G lambda + B_x u`, `G^T x = 0`,
/// `y = C_x x + C_v x' + C_lambda lambda`.
#[derive(Clone, Debug)]
pub struct MechanicalStructure {
    pub m: AffineMatrixOperator,
    pub d: AffineMatrixOperator,
    pub k: AffineMatrixOperator,
    pub g: AffineMatrixOperator,
    pub b_x: AffineMatrixOperator,
    pub c_x: AffineMatrixOperator,
    pub c_v: AffineMatrixOperator,
    pub c_lambda: AffineMatrixOperator,
    pub param_box: ParamBox,
}

fn sliced(op: &AffineMatrixOperator, r0: usize, r1: usize, c0: usize, c1: usize, scale: f64) -> Result<AffineMatrixOperator> {
    let terms: Vec<(ThetaExpr, Csc)> = op
        .terms()
        .iter()
        .map(|t| (t.theta.clone(), sparse::scale(&sparse::block(&t.matrix, r0, r1, c0, c1), scale)))
        .collect();
    AffineMatrixOperator::merged(terms, r1 - r0, c1 - c0).map(prune)
}

/// Drops non-constant terms whose matrix is identically zero.
fn prune(op: AffineMatrixOperator) -> AffineMatrixOperator {
    let (r, c) = (op.nrows(), op.ncols());
    let mut terms = op.terms().to_vec();
    let first = terms.remove(0);
    let mut kept = vec![first];
    kept.extend(terms.into_iter().filter(|t| !sparse::is_zero(&t.matrix)));
    AffineMatrixOperator::new(r, c, kept).expect("pruning keeps a valid operator")
}

/// Places each term of `op` at a block offset inside a larger zero matrix.
fn placed(op: &AffineMatrixOperator, nrows: usize, ncols: usize, r0: usize, c0: usize, transpose: bool) -> Vec<(ThetaExpr, Csc)> {
    op.terms()
        .iter()
        .map(|t| {
            let m = if transpose { t.matrix.transpose() } else { t.matrix.clone() };
            (t.theta.clone(), sparse::assemble(nrows, ncols, &[(r0, c0, &m)]))
        })
        .collect()
}

impl StokesStructure {
    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn q(&self) -> usize {
        self.g.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, q, m, p) = (self.n(), self.q(), self.b1.ncols(), self.c1.nrows());
        let shapes = [
            ("E", &self.e, n, n),
            ("A", &self.a, n, n),
            ("G", &self.g, n, q),
            ("B1", &self.b1, n, m),
            ("B2", &self.b2, q, m),
            ("C1", &self.c1, p, n),
            ("C2", &self.c2, p, q),
        ];
        for (name, op, r, c) in shapes {
            if (op.nrows(), op.ncols()) != (r, c) {
                return Err(Error::Dimension(format!("{name} is {}x{}, expected {r}x{c}", op.nrows(), op.ncols())));
            }
        }
        if q >= n {
            return Err(Error::Unsupported(format!("Stokes-like structure needs q < n (q = {q}, n = {n})")));
        }
        Ok(())
    }

    /// Assembles the full descriptor system (index 2).
    pub fn assemble(&self) -> Result<ParametricDaeSystem> {
        self.validate()?;
        let (n, q) = (self.n(), self.q());
        let nn = n + q;
        let (m, p) = (self.b1.ncols(), self.c1.nrows());
        let e = AffineMatrixOperator::merged(placed(&self.e, nn, nn, 0, 0, false), nn, nn)?;
        let mut at = placed(&self.a, nn, nn, 0, 0, false);
        at.extend(placed(&self.g, nn, nn, 0, n, false));
        at.extend(placed(&self.g, nn, nn, n, 0, true));
        let a = AffineMatrixOperator::merged(at, nn, nn)?;
        let mut bt = placed(&self.b1, nn, m, 0, 0, false);
        bt.extend(placed(&self.b2, nn, m, n, 0, false));
        let mut ct = placed(&self.c1, p, nn, 0, 0, false);
        ct.extend(placed(&self.c2, p, nn, 0, n, false));
        ParametricDaeSystem::new(
            prune(e),
            prune(a),
            prune(AffineMatrixOperator::merged(bt, nn, m)?),
            prune(AffineMatrixOperator::merged(ct, p, nn)?),
            self.param_box.clone(),
            SystemKind::StokesLike { n, q },
            2,
        )
    }

    /// Recovers the blocks from an assembled system with a Stokes-like tag.
    pub fn from_system(sys: &ParametricDaeSystem) -> Result<Self> {
        let SystemKind::StokesLike { n, q } = sys.kind else {
            return Err(Error::Unsupported(format!("expected a Stokes-like system, got {:?}", sys.kind)));
        };
        let nn = n + q;
        let (m, p) = (sys.n_inputs(), sys.n_outputs());
        let s = StokesStructure {
            e: sliced(&sys.e, 0, n, 0, n, 1.0)?,
            a: sliced(&sys.a, 0, n, 0, n, 1.0)?,
            g: sliced(&sys.a, 0, n, n, nn, 1.0)?,
            b1: sliced(&sys.b, 0, n, 0, m, 1.0)?,
            b2: sliced(&sys.b, n, nn, 0, m, 1.0)?,
            c1: sliced(&sys.c, 0, p, 0, n, 1.0)?,
            c2: sliced(&sys.c, 0, p, n, nn, 1.0)?,
            param_box: sys.param_box.clone(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn has_improper_input(&self) -> bool {
        self.b2.terms().iter().any(|t| !sparse::is_zero(&t.matrix))
    }

    pub fn has_improper_output(&self) -> bool {
        self.c2.terms().iter().any(|t| !sparse::is_zero(&t.matrix))
    }

    /// True when `E` and `A` are symmetric for every parameter.
    pub fn is_symmetric(&self) -> bool {
        self.e.terms().iter().chain(self.a.terms()).all(|t| sparse::is_symmetric(&t.matrix, 1e-13))
    }
}

impl MechanicalStructure {
    pub fn n_x(&self) -> usize {
        self.m.nrows()
    }

    pub fn q(&self) -> usize {
        self.g.ncols()
    }

    /// First-order index-3 form with state `[x; v; lambda]`.
    pub fn assemble(&self) -> Result<ParametricDaeSystem> {
        let (nx, q) = (self.n_x(), self.q());
        let nn = 2 * nx + q;
        let (m, p) = (self.b_x.ncols(), self.c_x.nrows());
        let id = Csc::identity(nx);
        let mut et = vec![(ThetaExpr::One, sparse::assemble(nn, nn, &[(0, 0, &id)]))];
        et.extend(placed(&self.m, nn, nn, nx, nx, false));
        let mut at = vec![(ThetaExpr::One, sparse::assemble(nn, nn, &[(0, nx, &id)]))];
        let neg = |op: &AffineMatrixOperator| -> Vec<(ThetaExpr, Csc)> {
            op.terms().iter().map(|t| (t.theta.clone(), sparse::scale(&t.matrix, -1.0))).collect()
        };
        for (th, mk) in neg(&self.k) {
            at.push((th, sparse::assemble(nn, nn, &[(nx, 0, &mk)])));
        }
        for (th, dk) in neg(&self.d) {
            at.push((th, sparse::assemble(nn, nn, &[(nx, nx, &dk)])));
        }
        at.extend(placed(&self.g, nn, nn, nx, 2 * nx, false));
        at.extend(placed(&self.g, nn, nn, 2 * nx, 0, true));
        let bt = placed(&self.b_x, nn, m, nx, 0, false);
        let mut ct = placed(&self.c_x, p, nn, 0, 0, false);
        ct.extend(placed(&self.c_v, p, nn, 0, nx, false));
        ct.extend(placed(&self.c_lambda, p, nn, 0, 2 * nx, false));
        ParametricDaeSystem::new(
            prune(AffineMatrixOperator::merged(et, nn, nn)?),
            prune(AffineMatrixOperator::merged(at, nn, nn)?),
            prune(AffineMatrixOperator::merged(bt, nn, m)?),
            prune(AffineMatrixOperator::merged(ct, p, nn)?),
            self.param_box.clone(),
            SystemKind::Mechanical { n_x: nx, q },
            3,
        )
    }

    pub fn from_system(sys: &ParametricDaeSystem) -> Result<Self> {
        let SystemKind::Mechanical { n_x: nx, q } = sys.kind else {
            return Err(Error::Unsupported(format!("expected a mechanical system, got {:?}", sys.kind)));
        };
        let nn = 2 * nx + q;
        let (m, p) = (sys.n_inputs(), sys.n_outputs());
        Ok(MechanicalStructure {
            m: sliced(&sys.e, nx, 2 * nx, nx, 2 * nx, 1.0)?,
            k: sliced(&sys.a, nx, 2 * nx, 0, nx, -1.0)?,
            d: sliced(&sys.a, nx, 2 * nx, nx, 2 * nx, -1.0)?,
            g: sliced(&sys.a, nx, 2 * nx, 2 * nx, nn, 1.0)?,
            b_x: sliced(&sys.b, nx, 2 * nx, 0, m, 1.0)?,
            c_x: sliced(&sys.c, 0, p, 0, nx, 1.0)?,
            c_v: sliced(&sys.c, 0, p, nx, 2 * nx, 1.0)?,
            c_lambda: sliced(&sys.c, 0, p, 2 * nx, nn, 1.0)?,
            param_box: sys.param_box.clone(),
        })
    }
}

/// Dense `[[E, 0], [0, 0]]`-style helper used by tests and oracles.
pub fn dense_blocks(sys: &ParametricDaeSystem, mu: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let s = sys.at(mu)?;
    Ok((sparse::to_dense(&s.e), sparse::to_dense(&s.a), s.b, s.c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::{from_triplets, to_dense};

    fn tiny() -> StokesStructure {
        let e = AffineMatrixOperator::constant(Csc::identity(3));
        let a1 = from_triplets(3, 3, [(0, 0, -2.0), (1, 1, -2.0), (2, 2, -2.0), (0, 1, 1.0), (1, 0, 1.0)]);
        let a = AffineMatrixOperator::from_pairs(Csc::zeros(3, 3), vec![(ThetaExpr::coord(0), a1)]).unwrap();
        StokesStructure {
            e,
            a,
            g: AffineMatrixOperator::constant(from_triplets(3, 1, [(0, 0, 1.0), (2, 0, -1.0)])),
            b1: AffineMatrixOperator::constant(from_triplets(3, 1, [(1, 0, 1.0)])),
            b2: AffineMatrixOperator::constant(from_triplets(1, 1, [(0, 0, 1.0)])),
            c1: AffineMatrixOperator::constant(from_triplets(1, 3, [(0, 0, 1.0)])),
            c2: AffineMatrixOperator::zeros(1, 1),
            param_box: ParamBox::new(vec![(0.5, 1.5)]),
        }
    }

    #[test]
    fn assemble_and_slice_round_trip() {
        let s = tiny();
        let sys = s.assemble().unwrap();
        assert_eq!(sys.kind, SystemKind::StokesLike { n: 3, q: 1 });
        let a = to_dense(&sys.a.evaluate(&[2.0]));
        assert_eq!(a[(0, 3)], 1.0);
        assert_eq!(a[(3, 2)], -1.0);
        assert_eq!(a[(0, 0)], -4.0);
        let back = StokesStructure::from_system(&sys).unwrap();
        assert_eq!(to_dense(&back.a.evaluate(&[0.7])), to_dense(&s.a.evaluate(&[0.7])));
        assert_eq!(to_dense(&back.g.evaluate(&[0.7])), to_dense(&s.g.evaluate(&[0.7])));
        assert!(back.has_improper_input());
        assert!(!back.has_improper_output());
        assert!(back.is_symmetric());
    }

    #[test]
    fn mechanical_round_trip() {
        let one = |v: f64| AffineMatrixOperator::constant(from_triplets(2, 2, [(0, 0, v), (1, 1, v)]));
        let ms = MechanicalStructure {
            m: one(1.0),
            d: one(0.1),
            k: one(2.0),
            g: AffineMatrixOperator::constant(from_triplets(2, 1, [(0, 0, 1.0), (1, 0, -1.0)])),
            b_x: AffineMatrixOperator::constant(from_triplets(2, 1, [(1, 0, 1.0)])),
            c_x: AffineMatrixOperator::constant(from_triplets(1, 2, [(0, 1, 1.0)])),
            c_v: AffineMatrixOperator::zeros(1, 2),
            c_lambda: AffineMatrixOperator::zeros(1, 1),
            param_box: ParamBox::new(vec![]),
        };
        let sys = ms.assemble().unwrap();
        assert_eq!(sys.n_state(), 5);
        let back = MechanicalStructure::from_system(&sys).unwrap();
        assert_eq!(to_dense(&back.k.evaluate(&[])), to_dense(&ms.k.evaluate(&[])));
        assert_eq!(to_dense(&back.d.evaluate(&[])), to_dense(&ms.d.evaluate(&[])));
    }
}
