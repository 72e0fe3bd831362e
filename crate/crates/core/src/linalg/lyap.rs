//! Small dense Lyapunov solver (Bartels-Stewart on a complex Schur form).

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;

use super::dense::to_complex;
use crate::error::{Error, Result};

/// Solves `T Y + Y T^H = -C` for upper triangular `T`.
fn triangular_lyapunov(t: &DMatrix<Complex64>, c: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let n = t.nrows();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let scale = t.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in (0..n).rev() {
        // (T + conj(t_jj) I) y_j = -c_j - sum_{k>j} conj(t_jk) y_k
        let mut rhs: Vec<Complex64> = (0..n).map(|i| -c[(i, j)]).collect();
        for k in j + 1..n {
            let w = t[(j, k)].conj();
            if w != Complex64::new(0.0, 0.0) {
                for i in 0..n {
                    rhs[i] -= w * y[(i, k)];
                }
            }
        }
        let shift = t[(j, j)].conj();
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..n {
                s -= t[(i, k)] * rhs[k];
            }
            let d = t[(i, i)] + shift;
            if d.norm() <= 1e-14 * scale {
                return Err(Error::Singular("Lyapunov operator singular (eigenvalues symmetric about the imaginary axis)".into()));
            }
            rhs[i] = s / d;
        }
        for i in 0..n {
            y[(i, j)] = rhs[i];
        }
    }
    Ok(y)
}

/// Solves `A X E^T + E X A^T + Q = 0` for small dense matrices with `E`
/// nonsingular. `Q` need not be symmetric.
pub fn generalized_lyapunov(e: &DMatrix<f64>, a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if e.shape() != (n, n) || a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::Dimension("generalized_lyapunov operands".into()));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let lu = e.clone().lu();
    let f = lu.solve(a).ok_or_else(|| Error::Singular("reduced E is singular".into()))?;
    let qe = lu.solve(q).ok_or_else(|| Error::Singular("reduced E is singular".into()))?;
    let qe = lu
        .solve(&qe.transpose())
        .ok_or_else(|| Error::Singular("reduced E is singular".into()))?
        .transpose();
    lyapunov(&f, &qe)
}

/// Solves `F X + X F^T + Q = 0`.
pub fn lyapunov(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let schur = Schur::try_new(to_complex(f), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NotConverged("complex Schur decomposition".into()))?;
    let (u, t) = schur.unpack();
    let c = u.adjoint() * to_complex(q) * &u;
    let y = triangular_lyapunov(&t, &c)?;
    let x = &u * y * u.adjoint();
    let _ = n;
    Ok(x.map(|v| v.re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_case() {
        let x = lyapunov(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_relative_eq!(x[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nonnormal_with_complex_spectrum() {
        let f = DMatrix::from_row_slice(3, 3, &[-1.0, 5.0, 0.3, -5.0, -1.0, 2.0, 0.0, 0.1, -0.2]);
        let q = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.2, 2.0, 0.5, 0.0, 0.5, 1.0]);
        let x = lyapunov(&f, &q).unwrap();
        assert_relative_eq!(&f * &x + &x * f.transpose() + &q, DMatrix::zeros(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn generalized_form() {
        let e = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let a = DMatrix::from_row_slice(2, 2, &[-3.0, 1.0, 0.0, -2.0]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let x = generalized_lyapunov(&e, &a, &q).unwrap();
        assert_relative_eq!(&a * &x * e.transpose() + &e * &x * a.transpose() + &q, DMatrix::zeros(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn singular_operator_is_reported() {
        let f = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(lyapunov(&f, &DMatrix::identity(2, 2)).is_err());
    }
}
