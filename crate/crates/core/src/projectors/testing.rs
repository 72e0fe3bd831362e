//! Small fixtures shared by unit tests.

use crate::linalg::sparse::from_triplets;
use crate::linalg::Csc;
use crate::param_system::{AffineMatrixOperator, ParamBox, ThetaExpr};

use super::StokesStructure;

pub fn small_stokes(nonsym: bool) -> StokesStructure {
    let n = 5;
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, -3.0 - i as f64 * 0.1));
        if i + 1 < n {
            t.push((i, i + 1, 1.0));
            t.push((i + 1, i, if nonsym { 0.4 } else { 1.0 }));
        }
    }
    let e = from_triplets(n, n, (0..n).map(|i| (i, i, 1.0 + 0.2 * i as f64)).chain([(0, 1, 0.1), (1, 0, 0.1)]));
    StokesStructure {
        e: AffineMatrixOperator::constant(e),
        a: AffineMatrixOperator::from_pairs(Csc::zeros(n, n), vec![(ThetaExpr::coord(0), from_triplets(n, n, t))]).unwrap(),
        g: AffineMatrixOperator::constant(from_triplets(n, 2, [(0, 0, 1.0), (1, 0, -1.0), (2, 1, 1.0), (4, 1, 2.0)])),
        b1: AffineMatrixOperator::constant(from_triplets(n, 1, [(3, 0, 1.0), (0, 0, 0.5)])),
        b2: AffineMatrixOperator::constant(from_triplets(2, 1, [(1, 0, 1.0)])),
        c1: AffineMatrixOperator::constant(from_triplets(1, n, [(0, 2, 1.0)])),
        c2: AffineMatrixOperator::constant(from_triplets(1, 2, [(0, 0, 1.0)])),
        param_box: ParamBox::new(vec![(0.5, 1.5)]),
    }
}
