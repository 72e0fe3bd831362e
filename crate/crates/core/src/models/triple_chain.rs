use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sparse::{from_triplets, Csc};
use crate::param_system::{AffineMatrixOperator, ParamBox, ParametricDaeSystem, ThetaExpr};
use crate::projectors::MechanicalStructure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripleChainConfig {
    pub ell: usize,
    /// `m_1, m_2, m_3, m_0`.
    pub masses: [f64; 4],
    /// `k_1, k_2, k_3, k_0`.
    pub stiffnesses: [f64; 4],
    pub rayleigh_alpha: f64,
    pub rayleigh_beta: f64,
    pub param_box: ParamBox,
    /// Zero-based position of the input/output mass; defaults to the
    /// proportional image of row 450 of the 601-mass chain.
    #[serde(default)]
    pub input_index: Option<usize>,
    /// Adds the multiplier as a second output.
    #[serde(default)]
    pub lambda_output: bool,
}

impl Default for TripleChainConfig {
    fn default() -> Self {
        TripleChainConfig {
            ell: 20,
            masses: [1.0; 4],
            stiffnesses: [1.0; 4],
            rayleigh_alpha: 0.01,
            rayleigh_beta: 0.02,
            param_box: ParamBox::new(vec![(0.1, 1.0); 3]),
            input_index: None,
            lambda_output: false,
        }
    }
}

impl TripleChainConfig {
    pub fn n(&self) -> usize {
        3 * self.ell + 1
    }

    pub fn input_position(&self) -> usize {
        let n = self.n();
        self.input_index.unwrap_or_else(|| ((450.0 / 601.0 * n as f64).round() as usize).clamp(1, n) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ell == 0 {
            return Err(Error::Invalid("chain length must be positive".into()));
        }
        if self.masses.iter().chain(&self.stiffnesses).any(|v| !(*v > 0.0))
            || !(self.rayleigh_alpha > 0.0 && self.rayleigh_beta > 0.0)
        {
            return Err(Error::Invalid("masses, stiffnesses and Rayleigh coefficients must be positive".into()));
        }
        if self.param_box.dim() != 3 || self.param_box.bounds.iter().any(|(lo, _)| !(*lo > 0.0)) {
            return Err(Error::Invalid("damper box must be a positive box in R^3".into()));
        }
        if self.input_position() >= self.n() {
            return Err(Error::Invalid(format!("input index {} outside 0..{}", self.input_position(), self.n())));
        }
        Ok(())
    }
}

pub fn make_triple_chain(cfg: &TripleChainConfig) -> Result<(ParametricDaeSystem, MechanicalStructure)> {
    cfg.validate()?;
    let l = cfg.ell;
    let n = cfg.n();
    let last = n - 1;
    let [m1, m2, m3, m0] = cfg.masses;
    let [k1, k2, k3, k0] = cfg.stiffnesses;
    let mass = from_triplets(n, n, (0..n).map(|i| (i, i, [m1, m2, m3, m0][(i / l).min(3)])));
    let mut kt = Vec::new();
    for (c, kc) in [k1, k2, k3].into_iter().enumerate() {
        let o = c * l;
        for i in 0..l {
            kt.push((o + i, o + i, 2.0 * kc));
            if i + 1 < l {
                kt.push((o + i, o + i + 1, -kc));
                kt.push((o + i + 1, o + i, -kc));
            }
        }
        kt.push((o + l - 1, last, kc));
        kt.push((last, o + l - 1, kc));
    }
    kt.push((last, last, k1 + k2 + k3 + k0));
    let stiff = from_triplets(n, n, kt);
    let selector = |c: usize| from_triplets(n, n, (c * l..(c + 1) * l).map(|i| (i, i, 1.0)));
    let f4 = from_triplets(n, n, [(last, last, 1.0)]);
    let d0 = crate::linalg::sparse::lincomb(n, n, &[(cfg.rayleigh_alpha, &mass), (cfg.rayleigh_beta, &stiff), (1.0, &f4)]);
    let d = AffineMatrixOperator::from_pairs(d0, (0..3).map(|c| (ThetaExpr::coord(c), selector(c))).collect())?;
    let g = from_triplets(n, 1, [(0, 0, 1.0), (last, 0, -1.0)]);
    let pos = cfg.input_position();
    let b_x = from_triplets(n, 1, [(pos, 0, 1.0)]);
    let p = if cfg.lambda_output { 2 } else { 1 };
    let c_x = from_triplets(p, n, [(0, pos, 1.0)]);
    let c_lambda = if cfg.lambda_output { from_triplets(p, 1, [(1, 0, 1.0)]) } else { Csc::zeros(p, 1) };
    let mech = MechanicalStructure {
        m: AffineMatrixOperator::constant(mass),
        d,
        k: AffineMatrixOperator::constant(stiff),
        g: AffineMatrixOperator::constant(g),
        b_x: AffineMatrixOperator::constant(b_x),
        c_x: AffineMatrixOperator::constant(c_x),
        c_v: AffineMatrixOperator::constant(Csc::zeros(p, n)),
        c_lambda: AffineMatrixOperator::constant(c_lambda),
        param_box: cfg.param_box.clone(),
    };
    let sys = mech.assemble()?;
    Ok((sys, mech))
}
