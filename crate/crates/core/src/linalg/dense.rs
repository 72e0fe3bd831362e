//! Dense helpers: orthonormal bases, realification, low-rank norms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use super::Field;

pub fn to_complex(x: &DMatrix<f64>) -> DMatrix<Complex64> {
    x.map(|v| Complex64::new(v, 0.0))
}

/// Real matrix times a matrix over `T`.
pub fn rmul<T: Field>(m: &DMatrix<f64>, x: &DMatrix<T>) -> DMatrix<T> {
    m.map(T::from_real) * x
}

/// Transposed real matrix times a matrix over `T`.
pub fn rtmul<T: Field>(m: &DMatrix<f64>, x: &DMatrix<T>) -> DMatrix<T> {
    m.transpose().map(T::from_real) * x
}

pub fn re(x: &DMatrix<Complex64>) -> DMatrix<f64> {
    x.map(|v| v.re)
}

/// SVD with a convergence threshold well below the library default, which
/// otherwise stalls at ~1e-8 relative accuracy on clustered spectra.
pub fn svd<T: Field>(x: DMatrix<T>, u: bool, v: bool) -> nalgebra::SVD<T, nalgebra::Dyn, nalgebra::Dyn> {
    match x.clone().try_svd(u, v, 1e-17, 100_000) {
        Some(s) => s,
        None => x.svd(u, v),
    }
}

/// Orthonormal basis of `range(X)`; directions with singular value below
/// `rtol * sigma_max` are dropped.
pub fn orth(x: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    if x.ncols() == 0 || x.nrows() == 0 {
        return DMatrix::zeros(x.nrows(), 0);
    }
    // tall-skinny: QR first so the SVD works on a small square factor
    let (q, r) = if x.nrows() > x.ncols() {
        let qr = x.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, x.clone())
    };
    let svd = svd(r, true, false);
    let s = &svd.singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(x.nrows(), 0);
    }
    let rank = s.iter().filter(|&&v| v > rtol * smax).count();
    let u = svd.u.unwrap().columns(0, rank).into_owned();
    match q {
        Some(q) => q * u,
        None => u,
    }
}

/// Singular values, descending.
pub fn singular_values<T: Field>(x: &DMatrix<T>) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    svd(x.clone(), false, false).singular_values.iter().cloned().collect()
}

/// `orth([V, Z])` keeping the columns of the orthonormal `V` in front.
/// New directions are kept when they exceed `rtol` times the largest
/// singular value of `Z`.
pub fn extend_orthonormal(v: &DMatrix<f64>, z: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    if v.ncols() == 0 {
        return orth(z, rtol);
    }
    let zmax = singular_values(z).first().copied().unwrap_or(0.0);
    if zmax == 0.0 {
        return v.clone();
    }
    let mut w = z.clone();
    for _ in 0..2 {
        let c = v.transpose() * &w;
        w -= v * c;
    }
    let wmax = singular_values(&w).first().copied().unwrap_or(0.0);
    if wmax <= rtol * zmax {
        return v.clone();
    }
    let mut b = orth(&w, rtol * zmax / wmax);
    let c = v.transpose() * &b;
    b -= v * c;
    let b = orth(&b, 1e-8);
    let mut out = DMatrix::zeros(v.nrows(), v.ncols() + b.ncols());
    out.columns_mut(0, v.ncols()).copy_from(v);
    out.columns_mut(v.ncols(), b.ncols()).copy_from(&b);
    out
}

/// Split a complex factor into `[Re Z, Im Z]`, dropping an all-zero
/// imaginary block. `Z Z^H` must be real for this to be exact.
pub fn realify(z: &DMatrix<Complex64>) -> DMatrix<f64> {
    let r = z.map(|v| v.re);
    let i = z.map(|v| v.im);
    let rmax = r.amax();
    if i.amax() <= 1e-14 * rmax.max(f64::MIN_POSITIVE) {
        return r;
    }
    let mut out = DMatrix::zeros(z.nrows(), 2 * z.ncols());
    out.columns_mut(0, z.ncols()).copy_from(&r);
    out.columns_mut(z.ncols(), z.ncols()).copy_from(&i);
    out
}

/// `|| F K F^H ||_F` evaluated through a thin QR of `F`.
pub fn lowrank_fro<T: Field>(f: &DMatrix<T>, k: &DMatrix<T>) -> f64 {
    if f.ncols() == 0 {
        return 0.0;
    }
    let r = if f.nrows() > f.ncols() { f.clone().qr().r() } else { f.clone() };
    (&r * k * r.adjoint()).norm()
}

/// Frobenius norm of `X Y^H` without forming it.
pub fn outer_fro<T: Field>(x: &DMatrix<T>, y: &DMatrix<T>) -> f64 {
    let gx = x.adjoint() * x;
    let gy = y.adjoint() * y;
    let t: T = (gx.component_mul(&gy.transpose())).sum();
    t.modulus().sqrt()
}

/// Factor `X = L L^T` of a symmetric positive semidefinite matrix,
/// discarding eigenvalues below `rtol * lambda_max`.
pub fn psd_factor(x: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = x.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let sym = (x + x.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > rtol * lmax && eig.eigenvalues[i] > 0.0).collect();
    let mut l = DMatrix::zeros(n, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        l.set_column(c, &(eig.eigenvectors.column(i) * eig.eigenvalues[i].sqrt()));
    }
    l
}

/// Dense 1-norm condition number of a small square matrix.
pub fn cond1<T: Field>(a: &DMatrix<T>) -> f64 {
    let norm1 = |m: &DMatrix<T>| {
        (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.modulus()).sum::<f64>()).fold(0.0, f64::max)
    };
    match a.clone().try_inverse() {
        Some(inv) => norm1(a) * norm1(&inv),
        None => f64::INFINITY,
    }
}

/// `orth([V, Z])` by Gram-Schmidt with column-norm pivoting: the remaining
/// column of largest norm is taken next, and the process stops once that
/// norm falls below `rtol` times the largest column norm of `Z`. `V` must
/// have orthonormal columns and is kept in front unchanged.
pub fn pivoted_extend(v: &DMatrix<f64>, z: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = z.nrows();
    let mut basis: Vec<DVector<f64>> = v.column_iter().map(|c| c.into_owned()).collect();
    let keep = basis.len();
    let mut w = z.clone();
    for _ in 0..2 {
        for q in &basis {
            let c = q.transpose() * &w;
            w -= q * c;
        }
    }
    let zmax = z.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut used = vec![false; w.ncols()];
    if zmax > 0.0 {
        loop {
            let mut best = None;
            let mut best_norm = 0.0;
            for j in 0..w.ncols() {
                let nj = w.column(j).norm();
                if !used[j] && nj > best_norm {
                    best = Some(j);
                    best_norm = nj;
                }
            }
            let Some(j) = best else { break };
            if best_norm <= rtol * zmax || basis.len() >= n {
                break;
            }
            used[j] = true;
            let mut q = w.column(j) / best_norm;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&q);
                    q.axpy(-c, b, 1.0);
                }
            }
            let qn = q.norm();
            if qn == 0.0 {
                continue;
            }
            q /= qn;
            for k in 0..w.ncols() {
                if !used[k] {
                    let c = q.dot(&w.column(k));
                    w.column_mut(k).axpy(-c, &q, 1.0);
                }
            }
            basis.push(q);
        }
    }
    let mut out = DMatrix::zeros(n, basis.len());
    for (j, q) in basis.iter().enumerate() {
        out.set_column(j, q);
    }
    if keep > 0 {
        out.columns_mut(0, keep).copy_from(v);
    }
    out
}

/// `orth(Z)` by pivoted Gram-Schmidt, see [`pivoted_extend`].
pub fn pivoted_orth(z: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    pivoted_extend(&DMatrix::zeros(z.nrows(), 0), z, rtol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pivoted_orth_rank_and_prefix() {
        let a = DMatrix::from_fn(8, 3, |i, j| ((i + 1) as f64).powi(j as i32));
        let z = DMatrix::from_fn(8, 5, |i, j| if j < 3 { a[(i, j)] } else { a[(i, 0)] - 2.0 * a[(i, 2)] });
        let q = pivoted_orth(&z, 1e-12);
        assert_eq!(q.ncols(), 3);
        assert_relative_eq!(q.transpose() * &q, DMatrix::identity(3, 3), epsilon = 1e-13);
        let resid = &z - &q * (q.transpose() * &z);
        assert!(resid.norm() < 1e-10 * z.norm());
        let v = q.columns(0, 2).into_owned();
        let w = pivoted_extend(&v, &z, 1e-12);
        assert_eq!(w.ncols(), 3);
        assert_eq!(w.columns(0, 2), v.columns(0, 2));
        assert!(pivoted_extend(&q, &z, 1e-12).ncols() == 3);
    }

    #[test]
    fn orth_drops_dependent_columns() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.0]);
        let q = orth(&x, 1e-12);
        assert_eq!(q.ncols(), 2);
        assert_relative_eq!(q.transpose() * &q, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn extend_keeps_prefix() {
        let v = orth(&DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 0.0, 0.0]), 1e-12);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let w = extend_orthonormal(&v, &z, 1e-12);
        assert_eq!(w.ncols(), 2);
        assert_relative_eq!(w.column(0), v.column(0), epsilon = 1e-15);
        assert_relative_eq!(w.transpose() * &w, DMatrix::identity(2, 2), epsilon = 1e-14);
    }

    #[test]
    fn realify_preserves_gram() {
        let z = DMatrix::from_row_slice(2, 2, &[
            Complex64::new(1.0, 2.0), Complex64::new(1.0, -2.0),
            Complex64::new(0.5, -1.0), Complex64::new(0.5, 1.0),
        ]);
        let g = &z * z.adjoint();
        let r = realify(&z);
        assert_relative_eq!(&r * r.transpose(), re(&g), epsilon = 1e-13);
    }

    #[test]
    fn lowrank_norm_matches_explicit() {
        let f = DMatrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64).cos());
        let k = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let explicit = (&f * &k * f.transpose()).norm();
        assert_relative_eq!(lowrank_fro(&f, &k), explicit, max_relative = 1e-13);
        let y = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64);
        let x = f.columns(0, 2).into_owned();
        assert_relative_eq!(outer_fro(&x, &y), (&x * y.transpose()).norm(), max_relative = 1e-13);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let a = DMatrix::from_fn(4, 2, |i, j| (i + 2 * j) as f64 + 1.0);
        let x = &a * a.transpose();
        let l = psd_factor(&x, 1e-14);
        assert_eq!(l.ncols(), 2);
        assert_relative_eq!(&l * l.transpose(), x, max_relative = 1e-12);
    }
}
