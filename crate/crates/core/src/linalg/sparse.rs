//! Helpers around `nalgebra_sparse::CscMatrix`.

use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use super::Field;

pub type Csc = CscMatrix<f64>;

pub fn from_triplets(nrows: usize, ncols: usize, t: impl IntoIterator<Item = (usize, usize, f64)>) -> Csc {
    let mut coo = CooMatrix::new(nrows, ncols);
    for (i, j, v) in t {
        coo.push(i, j, v);
    }
    CscMatrix::from(&coo)
}

pub fn from_dense(d: &DMatrix<f64>) -> Csc {
    from_triplets(
        d.nrows(),
        d.ncols(),
        (0..d.ncols()).flat_map(|j| (0..d.nrows()).map(move |i| (i, j))).filter_map(|(i, j)| {
            let v = d[(i, j)];
            (v != 0.0).then_some((i, j, v))
        }),
    )
}

pub fn to_dense(a: &Csc) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, j, v) in a.triplet_iter() {
        d[(i, j)] += *v;
    }
    d
}

/// `sum_k c_k * M_k` with a common shape.
pub fn lincomb<T: Field>(nrows: usize, ncols: usize, terms: &[(T, &Csc)]) -> CscMatrix<T> {
    let mut coo = CooMatrix::new(nrows, ncols);
    for (c, m) in terms {
        if *c == T::zero() {
            continue;
        }
        debug_assert_eq!((m.nrows(), m.ncols()), (nrows, ncols));
        for (i, j, v) in m.triplet_iter() {
            coo.push(i, j, *c * T::from_real(*v));
        }
    }
    CscMatrix::from(&coo)
}

pub fn to_field<T: Field>(a: &Csc) -> CscMatrix<T> {
    lincomb(a.nrows(), a.ncols(), &[(T::one(), a)])
}

/// `A * X` for real sparse `A` and a dense block of either field.
pub fn mul<T: Field>(a: &Csc, x: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(a.ncols(), x.nrows(), "sparse mul shape");
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    let (off, rows, vals) = (a.col_offsets(), a.row_indices(), a.values());
    for c in 0..x.ncols() {
        for j in 0..a.ncols() {
            let xj = x[(j, c)];
            if xj == T::zero() {
                continue;
            }
            for k in off[j]..off[j + 1] {
                y[(rows[k], c)] += xj * T::from_real(vals[k]);
            }
        }
    }
    y
}

/// `A^T * X`.
pub fn tr_mul<T: Field>(a: &Csc, x: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(a.nrows(), x.nrows(), "sparse tr_mul shape");
    let mut y = DMatrix::zeros(a.ncols(), x.ncols());
    let (off, rows, vals) = (a.col_offsets(), a.row_indices(), a.values());
    for c in 0..x.ncols() {
        for j in 0..a.ncols() {
            let mut s = T::zero();
            for k in off[j]..off[j + 1] {
                s += x[(rows[k], c)] * T::from_real(vals[k]);
            }
            y[(j, c)] = s;
        }
    }
    y
}

/// Place blocks `(row offset, col offset, matrix)` into an `nrows x ncols` matrix.
pub fn assemble(nrows: usize, ncols: usize, blocks: &[(usize, usize, &Csc)]) -> Csc {
    from_triplets(
        nrows,
        ncols,
        blocks.iter().flat_map(|(r0, c0, m)| m.triplet_iter().map(move |(i, j, v)| (i + r0, j + c0, *v))),
    )
}

/// Rows `r0..r1`, columns `c0..c1`.
pub fn block(a: &Csc, r0: usize, r1: usize, c0: usize, c1: usize) -> Csc {
    from_triplets(
        r1 - r0,
        c1 - c0,
        a.triplet_iter()
            .filter(|(i, j, _)| (r0..r1).contains(i) && (c0..c1).contains(j))
            .map(|(i, j, v)| (i - r0, j - c0, *v)),
    )
}

pub fn scale(a: &Csc, s: f64) -> Csc {
    let mut b = a.clone();
    b.values_mut().iter_mut().for_each(|v| *v *= s);
    b
}

pub fn max_abs(a: &Csc) -> f64 {
    a.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn norm1(a: &Csc) -> f64 {
    let off = a.col_offsets();
    (0..a.ncols())
        .map(|j| a.values()[off[j]..off[j + 1]].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_zero(a: &Csc) -> bool {
    a.values().iter().all(|v| *v == 0.0)
}

pub fn is_symmetric(a: &Csc, rtol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    let t = a.transpose();
    let d: Csc = lincomb(a.nrows(), a.ncols(), &[(1.0, a), (-1.0, &t)]);
    let tol = rtol * max_abs(a).max(f64::MIN_POSITIVE);
    d.values().iter().all(|v| v.abs() <= tol)
}

/// Symmetric part `(A + A^T) / 2`.
pub fn sym_part(a: &Csc) -> Csc {
    let t = a.transpose();
    from_triplets(
        a.nrows(),
        a.ncols(),
        a.triplet_iter().chain(t.triplet_iter()).map(|(i, j, v)| (i, j, 0.5 * v)),
    )
}
