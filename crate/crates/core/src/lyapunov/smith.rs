//! Improper Gramian factors by the finite Smith iteration, and the explicit
//! improper Hankel matrix of index-2 Stokes-like systems.

use nalgebra::DMatrix;

use super::{LowRankFactor, Side};
use crate::error::{Error, Result};
use crate::linalg::dense::lowrank_fro;
use crate::linalg::sparse;
use crate::linalg::SparseLu;
use crate::param_system::SystemMatrices;
use crate::projectors::{ProjectorContext, StokesStructure};

/// `Y = [(I - Pi_r) A^{-1} B, A^{-1} E (I - Pi_r) A^{-1} B, ...]` with `nu`
/// block columns, so that `P_i = Y Y^T`. The relative residual of the
/// discrete-time equation is stored in `residual_history`.
pub fn smith_improper(sys: &SystemMatrices, ctx: &ProjectorContext, nu: usize, side: Side) -> Result<LowRankFactor> {
    let n = sys.n();
    let m = sys.b.ncols();
    let lu = SparseLu::factor(&sys.a).map_err(|e| Error::Singular(format!("A(mu) is singular: {e}")))?;
    let mut y = DMatrix::<f64>::zeros(n, nu * m);
    let aib = lu.solve(&sys.b);
    let mut blk = ctx.apply_right_complement(&aib)?;
    for k in 0..nu {
        y.columns_mut(k * m, m).copy_from(&blk);
        blk = lu.solve(&sparse::mul(&sys.e, &blk));
    }
    let witness = blk.norm();
    let scale = aib.norm().max(y.norm());
    if nu > 0 && witness > 1e-10 * scale {
        return Err(Error::Accuracy(format!(
            "(A^-1 E)^nu (I - Pi_r) A^-1 B has norm {witness:e} relative to {scale:e}; declared index {nu} is too small"
        )));
    }
    // A Y Y^T A^T - E Y Y^T E^T - (I - Pi_l) B B^T (I - Pi_l)^T
    let qb = ctx.apply_left_complement(&sys.b)?;
    let k = y.ncols();
    let mut f = DMatrix::zeros(n, 2 * k + m);
    f.columns_mut(0, k).copy_from(&sparse::mul(&sys.a, &y));
    f.columns_mut(k, k).copy_from(&sparse::mul(&sys.e, &y));
    f.columns_mut(2 * k, m).copy_from(&qb);
    let mut w = DMatrix::<f64>::identity(2 * k + m, 2 * k + m);
    for i in k..2 * k + m {
        w[(i, i)] = -1.0;
    }
    let rhs = (qb.transpose() * &qb).norm();
    let res = if rhs > 0.0 { lowrank_fro(&f, &w) / rhs } else { lowrank_fro(&f, &w) };
    if res > 1e-10 {
        log::warn!("improper Gramian residual {res:e}");
    }
    Ok(LowRankFactor { z: y, side, residual_history: vec![res], mu: ctx.mu().to_vec(), shifts: Vec::new() })
}

/// `S_i^T A R_i = [[B11, C2 S^-1 B2], [C2 S^-1 B2, 0]]` with the weighted
/// Schur complement `S = G^T E^-1 G`, `B12 = B1 - A E^-1 G S^-1 B2` and
/// `B11 = C1 E^-1 G S^-1 B2 + C2 S^-1 G^T E^-1 B12`.
pub fn improper_svd_matrix_index2(st: &StokesStructure, ctx: &ProjectorContext) -> Result<DMatrix<f64>> {
    let mu = ctx.mu();
    let (_, _, _, a, g) = ctx.blocks().ok_or_else(|| Error::Unsupported("needs a structured projector context".into()))?;
    let s_inv = ctx.schur_inverse().expect("structured");
    let b1 = st.b1.evaluate_dense(mu);
    let b2 = st.b2.evaluate_dense(mu);
    let c1 = st.c1.evaluate_dense(mu);
    let c2 = st.c2.evaluate_dense(mu);
    let (p, m) = (c1.nrows(), b1.ncols());
    let gd = sparse::to_dense(g);
    let eg = ctx.solve_e(&gd).expect("structured");
    let egs_b2 = &eg * s_inv * &b2;
    let b12 = &b1 - sparse::mul(a, &egs_b2);
    let x = &c2 * s_inv * &b2;
    let b11 = &c1 * &egs_b2 + &c2 * s_inv * eg.transpose() * &b12;
    let mut out = DMatrix::zeros(2 * p, 2 * m);
    out.view_mut((0, 0), (p, m)).copy_from(&b11);
    out.view_mut((0, m), (p, m)).copy_from(&x);
    out.view_mut((p, 0), (p, m)).copy_from(&x);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_system::ParametricDaeSystem;
    use crate::projectors::testing::small_stokes;

    #[test]
    fn index_one_scalar() {
        let sys = ParametricDaeSystem::from_dense(
            &DMatrix::zeros(1, 1),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 1.0),
            1,
        )
        .unwrap();
        let ctx = ProjectorContext::dense(&[], DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)).unwrap();
        let y = smith_improper(&sys.at(&[]).unwrap(), &ctx, 1, Side::Controllability).unwrap();
        assert!((y.gramian()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(y.residual_history[0] < 1e-15);
    }

    #[test]
    fn differential_input_gives_zero_factor() {
        let mut st = small_stokes(false);
        st.b2 = crate::param_system::AffineMatrixOperator::zeros(2, 1);
        let sys = st.assemble().unwrap();
        let ctx = ProjectorContext::stokes(&st, &[1.0]).unwrap();
        let mut m = sys.at(&[1.0]).unwrap();
        m.b = ctx.apply_left(&m.b).unwrap();
        let y = smith_improper(&m, &ctx, 2, Side::Controllability).unwrap();
        assert!(y.z.norm() < 1e-12);
    }

    #[test]
    fn explicit_matrix_matches_smith_factors() {
        for nonsym in [false, true] {
            let st = small_stokes(nonsym);
            let sys = st.assemble().unwrap().at(&[0.7]).unwrap();
            let ctx = ProjectorContext::stokes(&st, &[0.7]).unwrap();
            let r = smith_improper(&sys, &ctx, 2, Side::Controllability).unwrap();
            let s = smith_improper(&sys.dual(), &ctx.transposed(), 2, Side::Observability).unwrap();
            assert!(r.residual_history[0] < 1e-10 && s.residual_history[0] < 1e-10);
            let direct = s.z.transpose() * sparse::mul(&sys.a, &r.z);
            let formula = improper_svd_matrix_index2(&st, &ctx).unwrap();
            assert!((&direct - &formula).norm() <= 1e-10 * formula.norm(), "{direct} vs {formula}");
        }
    }

    #[test]
    fn formula_is_linear_in_b2() {
        let st = small_stokes(false);
        let ctx = ProjectorContext::stokes(&st, &[1.0]).unwrap();
        let base = improper_svd_matrix_index2(&st, &ctx).unwrap();
        let mut st2 = st.clone();
        st2.b2 = crate::param_system::AffineMatrixOperator::constant(sparse::scale(&st.b2.evaluate(&[]), 2.0));
        st2.b1 = crate::param_system::AffineMatrixOperator::zeros(5, 1);
        let mut st1 = st.clone();
        st1.b1 = st2.b1.clone();
        let one = improper_svd_matrix_index2(&st1, &ctx).unwrap();
        let two = improper_svd_matrix_index2(&st2, &ctx).unwrap();
        assert!((two - one * 2.0).norm() < 1e-12);
        let mut st0 = st.clone();
        st0.b2 = crate::param_system::AffineMatrixOperator::zeros(2, 1);
        st0.c2 = crate::param_system::AffineMatrixOperator::zeros(1, 2);
        assert!(improper_svd_matrix_index2(&st0, &ctx).unwrap().norm() == 0.0);
        assert!(base.norm() > 0.0);
    }
}
