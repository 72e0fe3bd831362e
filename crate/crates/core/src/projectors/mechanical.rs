//! Strictly dissipative first-order form of constrained mechanical systems.

use serde::{Deserialize, Serialize};

use super::structure::{MechanicalStructure, StokesStructure};
use crate::error::{Error, Result};
use crate::linalg::eig::{spd_lambda_min, sym_range};
use crate::linalg::sparse::{self, Csc};
use crate::linalg::SparseCholesky;
use crate::param_system::{AffineMatrixOperator, ThetaExpr};

/// The bound is attained with a singular symmetric part, so automatic modes
/// stay strictly below it.
pub const GAMMA_SAFETY: f64 = 0.95;

/// How the coupling weight `gamma` is chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GammaMode {
    /// `0.95 * min` of the coefficient estimate over a tensor grid of the box.
    ConstantOverDomain { points_per_axis: usize },
    /// `0.95 *` the estimate at one parameter; only certified there.
    PerParameter { mu: Vec<f64> },
    Fixed { gamma: f64 },
}

impl Default for GammaMode {
    fn default() -> Self {
        GammaMode::ConstantOverDomain { points_per_axis: 10 }
    }
}

/// `lambda_min(D) / (lambda_max(M) + lambda_max(D)^2 / (4 lambda_min(K)))`.
pub fn gamma_formula(l_min_d: f64, l_max_m: f64, l_max_d: f64, l_min_k: f64) -> Result<f64> {
    if !(l_min_d > 0.0 && l_max_m > 0.0 && l_min_k > 0.0) {
        return Err(Error::Definiteness(format!(
            "gamma needs lambda_min(D) = {l_min_d:e}, lambda_max(M) = {l_max_m:e}, lambda_min(K) = {l_min_k:e} all positive"
        )));
    }
    Ok(l_min_d / (l_max_m + 0.25 * l_max_d * l_max_d / l_min_k))
}

/// Gamma from exact extremal eigenvalues of `M(mu)`, `D(mu)`, `K(mu)`.
pub fn gamma_bound(mech: &MechanicalStructure, mu: &[f64]) -> Result<f64> {
    let spd = |op: &AffineMatrixOperator, name: &str| -> Result<Csc> {
        let m = op.evaluate(mu);
        SparseCholesky::factor(&m).map_err(|_| Error::Definiteness(format!("{name}(mu) is not positive definite")))?;
        Ok(m)
    };
    let m = spd(&mech.m, "M")?;
    let d = spd(&mech.d, "D")?;
    let k = spd(&mech.k, "K")?;
    let (_, m_max) = sym_range(&m);
    let (_, d_max) = sym_range(&d);
    gamma_formula(spd_lambda_min(&d)?, m_max, d_max, spd_lambda_min(&k)?)
}

/// Extremal eigenvalues of every affine term, for the coefficient-based
/// lower estimate of gamma.
#[derive(Clone, Debug)]
pub struct GammaEstimator {
    m: Vec<(f64, f64)>,
    d: Vec<(f64, f64)>,
    k: Vec<(f64, f64)>,
    mech: MechanicalStructure,
}

impl GammaEstimator {
    pub fn new(mech: &MechanicalStructure) -> Result<Self> {
        let ranges = |op: &AffineMatrixOperator, name: &str| -> Result<Vec<(f64, f64)>> {
            op.terms()
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let r = sym_range(&sparse::sym_part(&t.matrix));
                    let scale = r.1.abs().max(r.0.abs());
                    if i > 0 && r.0 < -1e-12 * scale {
                        return Err(Error::Definiteness(format!("{name} term {i} is not positive semidefinite")));
                    }
                    Ok(r)
                })
                .collect()
        };
        Ok(GammaEstimator { m: ranges(&mech.m, "M")?, d: ranges(&mech.d, "D")?, k: ranges(&mech.k, "K")?, mech: mech.clone() })
    }

    /// Lower estimate of the exact gamma at `mu` (Weyl bounds term by term).
    pub fn estimate(&self, mu: &[f64]) -> Result<f64> {
        let bound = |op: &AffineMatrixOperator, r: &[(f64, f64)], name: &str| -> Result<(f64, f64)> {
            let th = op.thetas(mu);
            let (mut lo, mut hi) = (0.0, 0.0);
            for (k, (t, (l, h))) in th.iter().zip(r).enumerate() {
                if *t < 0.0 {
                    return Err(Error::Invalid(format!("coefficient {k} of {name} is negative at {mu:?}")));
                }
                lo += t * l;
                hi += t * h;
            }
            Ok((lo, hi))
        };
        let (_, m_max) = bound(&self.mech.m, &self.m, "M")?;
        let (d_min, d_max) = bound(&self.mech.d, &self.d, "D")?;
        let (k_min, _) = bound(&self.mech.k, &self.k, "K")?;
        gamma_formula(d_min, m_max, d_max, k_min)
    }
}

/// Shorthand for `estimate` without keeping the precomputation.
pub fn gamma_theta_estimate(mech: &MechanicalStructure, mu: &[f64]) -> Result<f64> {
    GammaEstimator::new(mech)?.estimate(mu)
}

/// Resolves the gamma value for a mode.
pub fn choose_gamma(mech: &MechanicalStructure, mode: &GammaMode) -> Result<f64> {
    match mode {
        GammaMode::Fixed { gamma } => Ok(*gamma),
        GammaMode::PerParameter { mu } => Ok(GAMMA_SAFETY * gamma_theta_estimate(mech, mu)?),
        GammaMode::ConstantOverDomain { points_per_axis } => {
            let est = GammaEstimator::new(mech)?;
            let mut g = f64::INFINITY;
            for mu in mech.param_box.grid(*points_per_axis) {
                g = g.min(est.estimate(&mu)?);
            }
            Ok(GAMMA_SAFETY * g)
        }
    }
}

fn terms_scaled(op: &AffineMatrixOperator, s: f64, nn: usize, cols: usize, r0: usize, c0: usize) -> Vec<(ThetaExpr, Csc)> {
    op.terms()
        .iter()
        .map(|t| (t.theta.clone(), sparse::assemble(nn, cols, &[(r0, c0, &sparse::scale(&t.matrix, s))])))
        .collect()
}

/// Checks `E(mu)` positive definite and `A(mu) + A(mu)^T` negative definite.
pub fn check_dissipative(st: &StokesStructure, mu: &[f64]) -> Result<()> {
    let e = st.e.evaluate(mu);
    SparseCholesky::factor(&e).map_err(|_| Error::Definiteness(format!("transformed E is not positive definite at {mu:?}")))?;
    let neg_as = sparse::scale(&sparse::sym_part(&st.a.evaluate(mu)), -1.0);
    SparseCholesky::factor(&neg_as)
        .map_err(|_| Error::Definiteness(format!("symmetric part of transformed A is not negative definite at {mu:?}")))?;
    Ok(())
}

/// The `2 n_x` first-order system with `E = [[K, gM], [gM, M]]`,
/// `A = [[-gK, K - gD], [-K, -D + gM]]`, `B = [gB_x; B_x]` and constraint
/// matrix `blkdiag(gG, G)`. Returns the structure and the gamma used.
pub fn first_order_sd_realization(mech: &MechanicalStructure, mode: &GammaMode) -> Result<(StokesStructure, f64)> {
    let g = choose_gamma(mech, mode)?;
    if !(g > 0.0) {
        return Err(Error::Definiteness(format!("gamma = {g:e} is not positive")));
    }
    let (nx, q) = (mech.n_x(), mech.q());
    let n = 2 * nx;
    let (m, p) = (mech.b_x.ncols(), mech.c_x.nrows());
    let mut et = terms_scaled(&mech.k, 1.0, n, n, 0, 0);
    et.extend(terms_scaled(&mech.m, g, n, n, 0, nx));
    et.extend(terms_scaled(&mech.m, g, n, n, nx, 0));
    et.extend(terms_scaled(&mech.m, 1.0, n, n, nx, nx));
    let mut at = terms_scaled(&mech.k, -g, n, n, 0, 0);
    at.extend(terms_scaled(&mech.k, 1.0, n, n, 0, nx));
    at.extend(terms_scaled(&mech.d, -g, n, n, 0, nx));
    at.extend(terms_scaled(&mech.k, -1.0, n, n, nx, 0));
    at.extend(terms_scaled(&mech.d, -1.0, n, n, nx, nx));
    at.extend(terms_scaled(&mech.m, g, n, n, nx, nx));
    let mut gt = terms_scaled(&mech.g, g, n, 2 * q, 0, 0);
    gt.extend(terms_scaled(&mech.g, 1.0, n, 2 * q, nx, q));
    let mut bt = terms_scaled(&mech.b_x, g, n, m, 0, 0);
    bt.extend(terms_scaled(&mech.b_x, 1.0, n, m, nx, 0));
    let place_c = |op: &AffineMatrixOperator, cols: usize, c0: usize| -> Vec<(ThetaExpr, Csc)> {
        op.terms().iter().map(|t| (t.theta.clone(), sparse::assemble(p, cols, &[(0, c0, &t.matrix)]))).collect()
    };
    let mut ct = place_c(&mech.c_x, n, 0);
    ct.extend(place_c(&mech.c_v, n, nx));
    let st = StokesStructure {
        e: AffineMatrixOperator::merged(et, n, n)?,
        a: AffineMatrixOperator::merged(at, n, n)?,
        g: AffineMatrixOperator::merged(gt, n, 2 * q)?,
        b1: AffineMatrixOperator::merged(bt, n, m)?,
        b2: AffineMatrixOperator::zeros(2 * q, m),
        c1: AffineMatrixOperator::merged(ct, p, n)?,
        // both multiplier copies equal lambda; read it from the second one
        c2: AffineMatrixOperator::merged(place_c(&mech.c_lambda, 2 * q, q), p, 2 * q)?,
        param_box: mech.param_box.clone(),
    };
    let samples: Vec<Vec<f64>> = match mode {
        GammaMode::PerParameter { mu } => vec![mu.clone()],
        _ => corners_and_midpoint(&mech.param_box.bounds),
    };
    for mu in &samples {
        check_dissipative(&st, mu)?;
    }
    Ok((st, g))
}

fn corners_and_midpoint(bounds: &[(f64, f64)]) -> Vec<Vec<f64>> {
    let d = bounds.len();
    let mut out: Vec<Vec<f64>> = (0..(1usize << d))
        .map(|mask| bounds.iter().enumerate().map(|(i, (lo, hi))| if mask >> i & 1 == 1 { *hi } else { *lo }).collect())
        .collect();
    out.push(bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::{from_triplets, to_dense};
    use crate::param_system::ParamBox;
    use nalgebra::{DMatrix, SymmetricEigen};

    fn scalar(mv: f64, dv: f64, kv: f64) -> MechanicalStructure {
        let c = |v: f64| AffineMatrixOperator::constant(from_triplets(1, 1, [(0, 0, v)]));
        MechanicalStructure {
            m: c(mv),
            d: c(dv),
            k: c(kv),
            g: AffineMatrixOperator::zeros(1, 0),
            b_x: c(1.0),
            c_x: c(1.0),
            c_v: AffineMatrixOperator::zeros(1, 1),
            c_lambda: AffineMatrixOperator::zeros(1, 0),
            param_box: ParamBox::new(vec![]),
        }
    }

    #[test]
    fn scalar_gamma_values() {
        assert!((gamma_bound(&scalar(1.0, 1.0, 1.0), &[]).unwrap() - 0.8).abs() < 1e-15);
        assert!((gamma_bound(&scalar(2.0, 1.0, 1.0), &[]).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert!((gamma_theta_estimate(&scalar(1.0, 1.0, 1.0), &[]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(gamma_bound(&scalar(1.0, -1.0, 1.0), &[]), Err(Error::Definiteness(_))));
    }

    #[test]
    fn scalar_transform_is_dissipative() {
        let e_of = |st: &StokesStructure| to_dense(&st.e.evaluate(&[]));
        let sym_eigs = |st: &StokesStructure| {
            let a = to_dense(&st.a.evaluate(&[]));
            SymmetricEigen::new((&a + a.transpose()) * 0.5).eigenvalues
        };
        // at the bound itself the symmetric part is only semidefinite
        let r = first_order_sd_realization(&scalar(1.0, 1.0, 1.0), &GammaMode::Fixed { gamma: 0.8 });
        assert!(matches!(r, Err(Error::Definiteness(_))));
        let (st, g) = first_order_sd_realization(&scalar(1.0, 1.0, 1.0), &GammaMode::PerParameter { mu: vec![] }).unwrap();
        assert!((g - 0.76).abs() < 1e-15);
        assert_eq!(e_of(&st), DMatrix::from_row_slice(2, 2, &[1.0, g, g, 1.0]));
        assert!(sym_eigs(&st).iter().all(|v| *v < 0.0));
        assert_eq!(to_dense(&st.b1.evaluate(&[])), DMatrix::from_column_slice(2, 1, &[g, 1.0]));
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut mech = scalar(1.0, 1.0, 1.0);
        mech.b_x = AffineMatrixOperator::zeros(1, 1);
        let (st, _) = first_order_sd_realization(&mech, &GammaMode::Fixed { gamma: 0.5 }).unwrap();
        assert!(sparse::is_zero(&st.b1.evaluate(&[])));
    }

    #[test]
    fn too_large_gamma_is_rejected() {
        let r = first_order_sd_realization(&scalar(1.0, 1.0, 1.0), &GammaMode::Fixed { gamma: 5.0 });
        assert!(matches!(r, Err(Error::Definiteness(_))));
    }

    #[test]
    fn parametric_damping_estimate_is_conservative() {
        let n = 3;
        let diag = |v: [f64; 3]| from_triplets(n, n, (0..n).map(|i| (i, i, v[i])));
        let k0 = from_triplets(n, n, [(0, 0, 2.0), (1, 1, 2.0), (2, 2, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 2, -1.0), (2, 1, -1.0)]);
        let mech = MechanicalStructure {
            m: AffineMatrixOperator::constant(diag([1.0, 2.0, 1.5])),
            d: AffineMatrixOperator::from_pairs(diag([0.1, 0.1, 0.1]), vec![(ThetaExpr::coord(0), diag([1.0, 0.0, 0.0]))]).unwrap(),
            k: AffineMatrixOperator::constant(k0),
            g: AffineMatrixOperator::constant(from_triplets(n, 1, [(0, 0, 1.0), (2, 0, -1.0)])),
            b_x: AffineMatrixOperator::constant(from_triplets(n, 1, [(1, 0, 1.0)])),
            c_x: AffineMatrixOperator::constant(from_triplets(1, n, [(0, 1, 1.0)])),
            c_v: AffineMatrixOperator::zeros(1, n),
            c_lambda: AffineMatrixOperator::zeros(1, 1),
            param_box: ParamBox::new(vec![(0.1, 1.0)]),
        };
        let est = GammaEstimator::new(&mech).unwrap();
        for mu in [0.1, 0.4, 1.0] {
            assert!(est.estimate(&[mu]).unwrap() <= gamma_bound(&mech, &[mu]).unwrap() * (1.0 + 1e-12));
        }
        let (st, g) = first_order_sd_realization(&mech, &GammaMode::default()).unwrap();
        assert!(g > 0.0);
        for mu in [0.1, 0.33, 0.77, 1.0] {
            check_dissipative(&st, &[mu]).unwrap();
        }
    }
}
