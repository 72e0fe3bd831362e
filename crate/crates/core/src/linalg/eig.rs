//! Eigenvalue estimates: extremal eigenvalues of symmetric matrices and
//! Ritz values of general operators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};

use super::banded::SparseCholesky;
use super::sparse::{self, Csc};
use crate::error::Result;

const DENSE_LIMIT: usize = 1000;

/// Largest eigenvalue of a symmetric operator via Lanczos with full
/// reorthogonalization.
pub fn lanczos_max(n: usize, steps: usize, op: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let mut v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    v /= v.norm();
    let k = steps.min(n);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(k);
    let mut alpha = Vec::with_capacity(k);
    let mut beta: Vec<f64> = Vec::with_capacity(k);
    for j in 0..k {
        basis.push(v.clone());
        let mut w = op(&v);
        let a = v.dot(&w);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let nb = w.norm();
        if j + 1 == k || nb <= 1e-13 * a.abs().max(1.0) {
            break;
        }
        beta.push(nb);
        v = w / nb;
    }
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j || j + 1 == i {
            beta[i.min(j)]
        } else {
            0.0
        }
    });
    SymmetricEigen::new(t).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn sym_range(a: &Csc) -> (f64, f64) {
    let n = a.nrows();
    if n == 0 {
        return (0.0, 0.0);
    }
    if n <= DENSE_LIMIT {
        let e = SymmetricEigen::new(sparse::to_dense(a)).eigenvalues;
        let lo = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        return (lo, hi);
    }
    let hi = lanczos_max(n, 80, |x| sparse::mul(a, &DMatrix::from_column_slice(n, 1, x.as_slice())).column(0).into_owned());
    let lo = -lanczos_max(n, 80, |x| -sparse::mul(a, &DMatrix::from_column_slice(n, 1, x.as_slice())).column(0).into_owned());
    (lo, hi)
}

/// Smallest eigenvalue of a symmetric positive definite matrix. Fails with a
/// definiteness error when the Cholesky factorization breaks down.
pub fn spd_lambda_min(a: &Csc) -> Result<f64> {
    let chol = SparseCholesky::factor(a)?;
    let n = a.nrows();
    if n <= DENSE_LIMIT {
        return Ok(sym_range(a).0);
    }
    let inv_max = lanczos_max(n, 80, |x| chol.solve(&DMatrix::from_column_slice(n, 1, x.as_slice())).column(0).into_owned());
    Ok(1.0 / inv_max)
}

/// Ritz values of a (generally nonsymmetric) complex operator from `steps`
/// Arnoldi iterations started at `v0`.
pub fn arnoldi_ritz(v0: &DVector<Complex64>, steps: usize, op: impl Fn(&DVector<Complex64>) -> DVector<Complex64>) -> Vec<Complex64> {
    let n = v0.len();
    let k = steps.min(n);
    let nrm = v0.norm();
    if nrm == 0.0 || k == 0 {
        return Vec::new();
    }
    let mut basis = vec![v0 / Complex64::new(nrm, 0.0)];
    let mut h = DMatrix::<Complex64>::zeros(k + 1, k);
    let mut m = k;
    for j in 0..k {
        let mut w = op(&basis[j]);
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = b.dotc(&w);
                h[(i, j)] += c;
                w -= b * c;
            }
        }
        let nb = w.norm();
        h[(j + 1, j)] = Complex64::new(nb, 0.0);
        if nb <= 1e-12 * h.column(j).norm().max(f64::MIN_POSITIVE) {
            m = j + 1;
            break;
        }
        basis.push(w / Complex64::new(nb, 0.0));
    }
    let hm = h.view((0, 0), (m, m)).into_owned();
    match nalgebra::Schur::try_new(hm, f64::EPSILON, 10_000) {
        Some(s) => s.unpack().1.diagonal().iter().cloned().collect(),
        None => Vec::new(),
    }
}
