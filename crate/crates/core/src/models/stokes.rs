use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sparse::{from_triplets, Csc};
use crate::param_system::{AffineMatrixOperator, ParamBox, ParametricDaeSystem, ThetaExpr};
use crate::projectors::StokesStructure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StokesVariant {
    /// `B_2 = 0`, `C_2 = 0`.
    ProperOnly,
    /// `B_2 = e_q`, `C_2 = e_1^T + e_q^T`.
    Improper,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StokesConfig {
    /// Pressure cells per axis.
    pub resolution: usize,
    pub mu_box: (f64, f64),
    pub variant: StokesVariant,
    /// `B_1(mu) = (1 + mu) B_1`.
    #[serde(default)]
    pub parametric_input: bool,
}

impl Default for StokesConfig {
    fn default() -> Self {
        StokesConfig { resolution: 6, mu_box: (0.5, 1.5), variant: StokesVariant::ProperOnly, parametric_input: false }
    }
}

impl StokesConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::Invalid(format!("grid resolution must be at least 2, got {}", self.resolution)));
        }
        let (lo, hi) = self.mu_box;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Invalid(format!("viscosity box [{lo}, {hi}] must lie in (0, inf)")));
        }
        Ok(())
    }

    /// `(n, q)` for this resolution.
    pub fn dimensions(&self) -> (usize, usize) {
        let k = self.resolution;
        (2 * k * (k - 1), k * k - 1)
    }
}

/// Marker-and-cell discretization on the unit square with no-slip walls:
/// `x' = mu A x + G p + B_1 u`, `0 = G^T x + B_2 u`. The last pressure
/// unknown is dropped to remove the constant-pressure null vector.
pub fn make_stokes(cfg: &StokesConfig) -> Result<(ParametricDaeSystem, StokesStructure)> {
    cfg.validate()?;
    let k = cfg.resolution;
    let h = 1.0 / k as f64;
    let (n, q) = cfg.dimensions();
    let nu = k * (k - 1);
    let uid = |i: usize, j: usize| j * (k - 1) + (i - 1);
    let vid = |i: usize, j: usize| nu + (j - 1) * k + i;
    let pid = |i: usize, j: usize| j * k + i;
    let ih2 = 1.0 / (h * h);
    let mut lap = Vec::new();
    let mut grad = Vec::new();
    let mut b1 = Vec::new();
    let mut c1 = Vec::new();
    // u on vertical faces: x = i h, y = (j + 1/2) h
    for j in 0..k {
        for i in 1..k {
            let r = uid(i, j);
            let mut diag = 0.0;
            for (ok, ii) in [(i > 1, i.wrapping_sub(1)), (i + 1 < k, i + 1)] {
                diag += 1.0;
                if ok {
                    lap.push((r, uid(ii, j), ih2));
                }
            }
            for (ok, jj) in [(j > 0, j.wrapping_sub(1)), (j + 1 < k, j + 1)] {
                if ok {
                    diag += 1.0;
                    lap.push((r, uid(i, jj), ih2));
                } else {
                    diag += 2.0;
                }
            }
            lap.push((r, r, -diag * ih2));
            grad.push((r, pid(i, j), -1.0 / h));
            grad.push((r, pid(i - 1, j), 1.0 / h));
            if 2 * j < k {
                b1.push((r, 0, h));
            }
        }
    }
    // v on horizontal faces: x = (i + 1/2) h, y = j h
    for j in 1..k {
        for i in 0..k {
            let r = vid(i, j);
            let mut diag = 0.0;
            for (ok, jj) in [(j > 1, j.wrapping_sub(1)), (j + 1 < k, j + 1)] {
                diag += 1.0;
                if ok {
                    lap.push((r, vid(i, jj), ih2));
                }
            }
            for (ok, ii) in [(i > 0, i.wrapping_sub(1)), (i + 1 < k, i + 1)] {
                if ok {
                    diag += 1.0;
                    lap.push((r, vid(ii, j), ih2));
                } else {
                    diag += 2.0;
                }
            }
            lap.push((r, r, -diag * ih2));
            grad.push((r, pid(i, j), -1.0 / h));
            grad.push((r, pid(i, j - 1), 1.0 / h));
            if 2 * i >= k {
                c1.push((0, r, h));
            }
        }
    }
    let a = from_triplets(n, n, lap);
    let g = from_triplets(n, q, grad.into_iter().filter(|t| t.1 < q));
    let b1m = from_triplets(n, 1, b1);
    let b1 = if cfg.parametric_input {
        AffineMatrixOperator::from_pairs(b1m.clone(), vec![(ThetaExpr::coord(0), b1m)])?
    } else {
        AffineMatrixOperator::constant(b1m)
    };
    let (b2, c2) = match cfg.variant {
        StokesVariant::ProperOnly => (Csc::zeros(q, 1), Csc::zeros(1, q)),
        StokesVariant::Improper => {
            let c2 = if q > 1 { vec![(0, 0, 1.0), (0, q - 1, 1.0)] } else { vec![(0, 0, 1.0)] };
            (from_triplets(q, 1, [(q - 1, 0, 1.0)]), from_triplets(1, q, c2))
        }
    };
    let st = StokesStructure {
        e: AffineMatrixOperator::constant(Csc::identity(n)),
        a: AffineMatrixOperator::from_pairs(Csc::zeros(n, n), vec![(ThetaExpr::coord(0), a)])?,
        g: AffineMatrixOperator::constant(g),
        b1,
        b2: AffineMatrixOperator::constant(b2),
        c1: AffineMatrixOperator::constant(from_triplets(1, n, c1)),
        c2: AffineMatrixOperator::constant(c2),
        param_box: ParamBox::new(vec![cfg.mu_box]),
    };
    let sys = st.assemble()?;
    Ok((sys, st))
}
