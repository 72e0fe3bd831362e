//! Evaluation view of a full or reduced model at one parameter.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::balanced_truncation::Rom;
use crate::error::{Error, Result};
use crate::linalg::{sparse, SparseLu};
use crate::lyapunov::quasi_weierstrass_oracle;
use crate::param_system::{ParametricDaeSystem, SystemMatrices};
use crate::projectors::{ProjectorContext, StokesStructure};

/// A descriptor system `E z' = A z + B u`, `y = C z` with its spectral
/// projectors and the nilpotency index of the infinite part.
#[derive(Clone, Debug)]
pub struct Model {
    pub label: String,
    pub mu: Vec<f64>,
    pub sys: SystemMatrices,
    pub ctx: ProjectorContext,
    pub nu: usize,
}

impl Model {
    /// Full-order model of a Stokes-like structure.
    pub fn full(label: &str, st: &StokesStructure, system: &ParametricDaeSystem, mu: &[f64]) -> Result<Self> {
        Ok(Model {
            label: label.to_string(),
            mu: mu.to_vec(),
            sys: system.at(mu)?,
            ctx: ProjectorContext::stokes(st, mu)?,
            nu: system.index,
        })
    }

    /// A reduced model in block form `E = diag(E_p, N)`, `A = diag(A_p, I)`.
    pub fn reduced(label: &str, rom: &Rom) -> Result<Self> {
        let r = rom.order();
        let mut pr = DMatrix::zeros(r, r);
        pr.view_mut((0, 0), (rom.r_p, rom.r_p)).fill_with_identity();
        if rom.structure_defect > 1e-8 {
            log::warn!("reduced model block structure defect {:e}; projectors are approximate", rom.structure_defect);
        }
        let n = rom.n_r();
        let mut nu = 0;
        let mut p = DMatrix::<f64>::identity(n.nrows(), n.nrows());
        while n.nrows() > 0 && p.norm() > 1e-12 * (1.0 + n.norm()) && nu <= n.nrows() {
            p = &n * p;
            nu += 1;
        }
        Ok(Model {
            label: label.to_string(),
            mu: rom.mu.clone(),
            sys: SystemMatrices {
                e: sparse::from_dense(&rom.e_r),
                a: sparse::from_dense(&rom.a_r),
                b: rom.b_r.clone(),
                c: rom.c_r.clone(),
            },
            ctx: ProjectorContext::dense(&rom.mu, pr.clone(), pr)?,
            nu,
        })
    }

    /// Dense unstructured model; projectors from the quasi-Weierstrass form.
    pub fn dense(label: &str, e: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Self> {
        let qwf = quasi_weierstrass_oracle(e, a)?;
        let (pl, pr) = qwf.projectors()?;
        Ok(Model {
            label: label.to_string(),
            mu: Vec::new(),
            sys: SystemMatrices { e: sparse::from_dense(e), a: sparse::from_dense(a), b: b.clone(), c: c.clone() },
            ctx: ProjectorContext::dense(&[], pl, pr)?,
            nu: qwf.nu,
        })
    }

    pub fn n(&self) -> usize {
        self.sys.n()
    }

    pub fn n_inputs(&self) -> usize {
        self.sys.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.sys.c.nrows()
    }

    pub fn transfer(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        self.sys.transfer_function(s)
    }

    /// `Y_k = (A^-1 E)^k (I - Pi_r) A^-1 B` for `k < nu`; the infinite part
    /// of a trajectory is `-sum_k Y_k u^(k)`.
    pub fn improper_blocks(&self) -> Result<Vec<DMatrix<f64>>> {
        if self.nu == 0 {
            return Ok(Vec::new());
        }
        let lu = SparseLu::factor(&self.sys.a).map_err(|e| Error::Singular(format!("A is singular: {e}")))?;
        let mut blk = self.ctx.apply_right_complement(&lu.solve(&self.sys.b))?;
        let mut out = Vec::with_capacity(self.nu);
        for _ in 0..self.nu {
            let next = lu.solve(&sparse::mul(&self.sys.e, &blk));
            out.push(blk);
            blk = next;
        }
        Ok(out)
    }
}
