//! Dense factorization of the projectors, used for desk-scale checks of the
//! error bounds.

use nalgebra::DMatrix;

use super::context::ProjectorContext;
use crate::error::{Error, Result};
use crate::linalg::sparse;

pub const PHI_SIZE_LIMIT: usize = 2000;

/// `Pi = Xi_l Xi_r^T`, `Pi_l = Phi_l Phi_r^T` and `Pi_r = Psi_l Psi_r^T` with
/// `Phi_l = Psi_r = [Xi_l; 0]`.
#[derive(Clone, Debug)]
pub struct PhiFactorization {
    pub xi_l: DMatrix<f64>,
    pub xi_r: DMatrix<f64>,
    pub phi_l: DMatrix<f64>,
    pub phi_r: DMatrix<f64>,
    pub psi_l: DMatrix<f64>,
    pub psi_r: DMatrix<f64>,
}

pub fn phi_factorization(ctx: &ProjectorContext) -> Result<PhiFactorization> {
    let (n, q, _, _, _) = ctx
        .blocks()
        .ok_or_else(|| Error::Unsupported("the factorization needs a structured projector context".into()))?;
    if n + q > PHI_SIZE_LIMIT {
        return Err(Error::Unsupported(format!("dense factorization limited to N <= {PHI_SIZE_LIMIT}, got {}", n + q)));
    }
    let pi = ctx.apply_pi(&DMatrix::<f64>::identity(n, n)).expect("structured");
    let svd = crate::linalg::dense::svd(pi, false, true);
    let nf = n - q;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let vt = svd.v_t.unwrap();
    let smax = svd.singular_values[order[0]];
    if nf < n && svd.singular_values[order[nf]] > 1e-8 * smax {
        return Err(Error::Accuracy(format!("Pi has rank above n - q = {nf}")));
    }
    let mut xi_r = DMatrix::zeros(n, nf);
    for (c, &k) in order.iter().take(nf).enumerate() {
        xi_r.set_column(c, &vt.row(k).transpose());
    }
    // Pi Xi_r = Xi_l (Xi_r^T Xi_r) = Xi_l
    let xi_l = ctx.apply_pi(&xi_r).expect("structured");
    let stack = |top: &DMatrix<f64>, bottom: DMatrix<f64>| {
        let mut m = DMatrix::zeros(n + q, nf);
        m.rows_mut(0, n).copy_from(top);
        m.rows_mut(n, q).copy_from(&bottom);
        m
    };
    let phi_l = stack(&xi_l, DMatrix::zeros(q, nf));
    let psi_l = stack(&xi_r, -ctx.lambda_map(&xi_r).expect("structured"));
    let phi_r = stack(&xi_r, -ctx.transposed().lambda_map(&xi_r).expect("structured"));
    Ok(PhiFactorization { xi_l, xi_r, psi_r: phi_l.clone(), phi_l, phi_r, psi_l })
}

impl PhiFactorization {
    /// `(Phi_r^T E Psi_l, Phi_r^T A Psi_l)` on the full pencil.
    pub fn reduced_pencil(&self, e: &sparse::Csc, a: &sparse::Csc) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.phi_r.transpose() * sparse::mul(e, &self.psi_l), self.phi_r.transpose() * sparse::mul(a, &self.psi_l))
    }

    /// Dense `L_{Phi,Psi} = -(A ⊗ E + E ⊗ A)` of the reduced pencil.
    pub fn lyapunov_operator(&self, e: &sparse::Csc, a: &sparse::Csc) -> DMatrix<f64> {
        let (ef, af) = self.reduced_pencil(e, a);
        -(af.kronecker(&ef) + ef.kronecker(&af))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projectors::testing::small_stokes;

    #[test]
    fn factors_reproduce_projectors() {
        for nonsym in [false, true] {
            let st = small_stokes(nonsym);
            let ctx = ProjectorContext::stokes(&st, &[0.9]).unwrap();
            let f = phi_factorization(&ctx).unwrap();
            let nf = f.xi_l.ncols();
            assert!((f.xi_r.transpose() * &f.xi_l - DMatrix::<f64>::identity(nf, nf)).norm() < 1e-12);
            assert!((f.phi_r.transpose() * &f.phi_l - DMatrix::<f64>::identity(nf, nf)).norm() < 1e-12);
            assert!((&f.phi_l * f.phi_r.transpose() - ctx.dense_left()).norm() < 1e-12);
            assert!((&f.psi_l * f.psi_r.transpose() - ctx.dense_right()).norm() < 1e-12);
            let (_, _, _, _, g) = ctx.blocks().unwrap();
            assert!((f.xi_r.transpose() * sparse::to_dense(g)).norm() < 1e-12);
            let sys = st.assemble().unwrap().at(&[0.9]).unwrap();
            let (ef, af) = f.reduced_pencil(&sys.e, &sys.a);
            let e = st.e.evaluate_dense(&[0.9]);
            let a = st.a.evaluate_dense(&[0.9]);
            assert!((ef - f.xi_r.transpose() * e * &f.xi_r).norm() < 1e-12);
            assert!((af - f.xi_r.transpose() * a * &f.xi_r).norm() < 1e-12);
        }
    }

    #[test]
    fn symmetric_projector_gives_equal_factors() {
        use crate::linalg::sparse::from_triplets;
        use crate::linalg::Csc;
        use crate::param_system::{AffineMatrixOperator, ParamBox};
        use crate::projectors::StokesStructure;
        let n = 4;
        let st = StokesStructure {
            e: AffineMatrixOperator::constant(Csc::identity(n)),
            a: AffineMatrixOperator::constant(sparse::scale(&Csc::identity(n), -1.0)),
            g: AffineMatrixOperator::constant(from_triplets(n, 1, [(0, 0, 1.0), (1, 0, 1.0)])),
            b1: AffineMatrixOperator::zeros(n, 1),
            b2: AffineMatrixOperator::zeros(1, 1),
            c1: AffineMatrixOperator::zeros(1, n),
            c2: AffineMatrixOperator::zeros(1, 1),
            param_box: ParamBox::new(vec![]),
        };
        let f = phi_factorization(&ProjectorContext::stokes(&st, &[]).unwrap()).unwrap();
        assert!((&f.xi_l - &f.xi_r).norm() < 1e-12);
    }
}
