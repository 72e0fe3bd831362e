//! Dense desk-scale oracles: projected Lyapunov solve and quasi-Weierstrass
//! decomposition.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::dense::{orth, to_complex};
use crate::linalg::lyap::generalized_lyapunov;

pub const ORACLE_SIZE_LIMIT: usize = 200;
const KRONECKER_LIMIT: usize = 40;

fn guard(n: usize) -> Result<()> {
    if n > ORACLE_SIZE_LIMIT {
        return Err(Error::Unsupported(format!("dense oracle limited to N <= {ORACLE_SIZE_LIMIT}, got {n}")));
    }
    Ok(())
}

/// Solves `A X E^T + E X A^T + B_l B_r^T = 0` with `X = Pi_r X Pi_r^T` by
/// restricting to orthonormal bases of `range(Pi_r)` and `E range(Pi_r)`.
pub fn dense_projected_sylvester_oracle(
    e: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b_l: &DMatrix<f64>,
    b_r: &DMatrix<f64>,
    pr: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = e.nrows();
    guard(n)?;
    if a.shape() != (n, n) || pr.shape() != (n, n) || b_l.nrows() != n || b_r.shape() != b_l.shape() {
        return Err(Error::Dimension("oracle operands".into()));
    }
    let psi = orth(pr, 1e-10);
    let nf = psi.ncols();
    if nf == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let phi = orth(&(e * &psi), 1e-12);
    if phi.ncols() != nf {
        return Err(Error::Singular("E is singular on the finite deflating subspace".into()));
    }
    let ef = phi.transpose() * e * &psi;
    let af = phi.transpose() * a * &psi;
    let q = phi.transpose() * b_l * b_r.transpose() * &phi;
    let y = if nf <= KRONECKER_LIMIT {
        // vec(A Y E^T) = (E kron A) vec(Y)
        let l = ef.kronecker(&af) + af.kronecker(&ef);
        let rhs = -DMatrix::from_column_slice(nf * nf, 1, q.as_slice());
        let sol = l.lu().solve(&rhs).ok_or_else(|| Error::Singular("restricted Kronecker system is singular".into()))?;
        DMatrix::from_column_slice(nf, nf, sol.as_slice())
    } else {
        generalized_lyapunov(&ef, &af, &q)?
    };
    Ok(&psi * y * psi.transpose())
}

/// Symmetric case `B_l = B_r = PiB`.
pub fn dense_projected_lyap_oracle(e: &DMatrix<f64>, a: &DMatrix<f64>, pib: &DMatrix<f64>, pr: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = dense_projected_sylvester_oracle(e, a, pib, pib, pr)?;
    Ok((&p + p.transpose()) * 0.5)
}

/// `E = W diag(I, N) T`, `A = W diag(J, I) T`.
#[derive(Clone, Debug)]
pub struct QuasiWeierstrass {
    pub w: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub nnil: DMatrix<f64>,
    pub nu: usize,
    pub n_f: usize,
}

fn rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = crate::linalg::dense::svd(m.clone(), false, false).singular_values;
    let smax = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|v| **v > rtol * smax && **v > 0.0).count()
}

fn null_space(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let n = m.ncols();
    let svd = crate::linalg::dense::svd(m.clone(), false, true);
    let vt = svd.v_t.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut out = DMatrix::zeros(n, n - r);
    for (c, &i) in idx.iter().skip(r).enumerate() {
        out.set_column(c, &vt.row(i).transpose());
    }
    out
}

fn pinv_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    crate::linalg::dense::svd(m.clone(), true, true).solve(rhs, 1e-13).map_err(|e| Error::Singular(e.to_string()))
}

/// Quasi-Weierstrass form through the rank sequence of `(s0 E - A)^{-1} E`.
pub fn quasi_weierstrass_oracle(e: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<QuasiWeierstrass> {
    let n = e.nrows();
    guard(n)?;
    if e.shape() != (n, n) || a.shape() != (n, n) {
        return Err(Error::Dimension("pencil must be square".into()));
    }
    let ne = e.abs().row_sum().max();
    let na = a.abs().row_sum().max().max(f64::MIN_POSITIVE);
    let rho = if ne > 0.0 { na / ne } else { 1.0 };
    let mut m = None;
    for f in [1.0, 1.37, 2.71, 0.53, 7.9] {
        let s0 = rho * f;
        let lu = (e * s0 - a).lu();
        if let Some(sol) = lu.solve(e) {
            if sol.iter().all(|v| v.is_finite()) && crate::linalg::dense::cond1(&(e * s0 - a)) < 1e13 {
                m = Some(sol);
                break;
            }
        }
    }
    let m = m.ok_or_else(|| Error::Singular("pencil is not regular (s E - A singular at all trial points)".into()))?;
    let rtol = 1e-9;
    let mut ranks = vec![n];
    let mut pow = DMatrix::identity(n, n);
    let mut nu = None;
    for k in 1..=n + 1 {
        pow = &m * &pow;
        ranks.push(rank(&pow, rtol));
        if ranks[k] == ranks[k - 1] {
            nu = Some(k - 1);
            break;
        }
    }
    let nu = nu.ok_or_else(|| Error::Accuracy("rank sequence did not stabilize".into()))?;
    let mut mnu = DMatrix::identity(n, n);
    for _ in 0..nu {
        mnu = &m * &mnu;
    }
    let n_f = ranks[nu];
    let t_f = if nu == 0 { DMatrix::identity(n, n) } else { orth(&mnu, rtol) };
    if t_f.ncols() != n_f {
        return Err(Error::Accuracy(format!("finite subspace dimension {} differs from rank {n_f}", t_f.ncols())));
    }
    let t_inf = null_space(&mnu, n_f);
    let et = e * &t_f;
    let at = a * &t_inf;
    let j = pinv_solve(&et, &(a * &t_f))?;
    let nnil = pinv_solve(&at, &(e * &t_inf))?;
    let mut w = DMatrix::zeros(n, n);
    w.columns_mut(0, n_f).copy_from(&et);
    w.columns_mut(n_f, n - n_f).copy_from(&at);
    let mut tinv = DMatrix::zeros(n, n);
    tinv.columns_mut(0, n_f).copy_from(&t_f);
    tinv.columns_mut(n_f, n - n_f).copy_from(&t_inf);
    let t = tinv.clone().try_inverse().ok_or_else(|| Error::Singular("deflating subspaces are not complementary".into()))?;
    let qwf = QuasiWeierstrass { w, t, j, nnil, nu, n_f };
    let (er, ar) = qwf.reconstruct();
    let de = (&er - e).norm() / e.norm().max(1.0);
    let da = (&ar - a).norm() / a.norm().max(1.0);
    if de > 1e-8 || da > 1e-8 {
        return Err(Error::Accuracy(format!("quasi-Weierstrass reconstruction defects {de:e}, {da:e}")));
    }
    Ok(qwf)
}

impl QuasiWeierstrass {
    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_inf(&self) -> usize {
        self.n() - self.n_f
    }

    fn blocks(&self, top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, nf) = (self.n(), self.n_f);
        let mut d = DMatrix::zeros(n, n);
        d.view_mut((0, 0), (nf, nf)).copy_from(top);
        d.view_mut((nf, nf), (n - nf, n - nf)).copy_from(bottom);
        d
    }

    /// `(W diag(I, N) T, W diag(J, I) T)`.
    pub fn reconstruct(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let (nf, ni) = (self.n_f, self.n_inf());
        let e = &self.w * self.blocks(&DMatrix::identity(nf, nf), &self.nnil) * &self.t;
        let a = &self.w * self.blocks(&self.j, &DMatrix::identity(ni, ni)) * &self.t;
        (e, a)
    }

    /// Spectral projectors `(Pi_l, Pi_r)` onto the finite deflating subspaces.
    pub fn projectors(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (nf, ni) = (self.n_f, self.n_inf());
        let d = self.blocks(&DMatrix::identity(nf, nf), &DMatrix::zeros(ni, ni));
        let winv = self.w.clone().try_inverse().ok_or_else(|| Error::Singular("W is singular".into()))?;
        let tinv = self.t.clone().try_inverse().ok_or_else(|| Error::Singular("T is singular".into()))?;
        Ok((&self.w * &d * winv, tinv * d * &self.t))
    }

    fn io_blocks(&self, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let wb = self.w.clone().lu().solve(b).ok_or_else(|| Error::Singular("W is singular".into()))?;
        let tinv = self.t.clone().try_inverse().ok_or_else(|| Error::Singular("T is singular".into()))?;
        Ok((wb, c * tinv))
    }

    /// Markov parameters `M_k = -C_2 N^k B_2`, `k < nu`.
    pub fn markov(&self, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let (wb, ct) = self.io_blocks(b, c)?;
        let nf = self.n_f;
        let ni = self.n_inf();
        let b2 = wb.rows(nf, ni).into_owned();
        let c2 = ct.columns(nf, ni).into_owned();
        let mut out = Vec::new();
        let mut nk = DMatrix::identity(ni, ni);
        for _ in 0..self.nu {
            out.push(-(&c2 * &nk * &b2));
            nk = &self.nnil * nk;
        }
        Ok(out)
    }

    /// Transfer function through the decoupled blocks.
    pub fn transfer(&self, b: &DMatrix<f64>, c: &DMatrix<f64>, s: Complex64) -> Result<DMatrix<Complex64>> {
        let (wb, ct) = self.io_blocks(b, c)?;
        let (nf, ni) = (self.n_f, self.n_inf());
        let jf = to_complex(&self.j);
        let nn = to_complex(&self.nnil);
        let fin = DMatrix::<Complex64>::identity(nf, nf) * s - jf;
        let inf = nn * s - DMatrix::<Complex64>::identity(ni, ni);
        let b1 = to_complex(&wb.rows(0, nf).into_owned());
        let b2 = to_complex(&wb.rows(nf, ni).into_owned());
        let c1 = to_complex(&ct.columns(0, nf).into_owned());
        let c2 = to_complex(&ct.columns(nf, ni).into_owned());
        let x1 = fin.lu().solve(&b1).ok_or_else(|| Error::Singular(format!("s = {s} is a finite eigenvalue")))?;
        let x2 = inf.lu().solve(&b2).ok_or_else(|| Error::Singular("nilpotent block".into()))?;
        Ok(c1 * x1 + c2 * x2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::lyap::lyapunov;

    #[test]
    fn scalar_projected_lyapunov() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let p = dense_projected_lyap_oracle(&one, &(-&one), &DMatrix::from_element(1, 1, 2f64.sqrt()), &one).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
        let z = dense_projected_lyap_oracle(&one, &(-&one), &DMatrix::zeros(1, 1), &one).unwrap();
        assert_eq!(z[(0, 0)], 0.0);
    }

    #[test]
    fn unconstrained_matches_classical_solver() {
        let n = 10;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j { -3.0 - i as f64 } else if (i as i64 - j as i64).abs() == 1 { 1.0 } else { 0.0 });
        let b = DMatrix::from_fn(n, 2, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
        let p = dense_projected_lyap_oracle(&DMatrix::identity(n, n), &a, &b, &DMatrix::identity(n, n)).unwrap();
        let r = lyapunov(&a, &(&b * b.transpose())).unwrap();
        assert!((&p - &r).norm() <= 1e-10 * r.norm());
    }

    #[test]
    fn identity_mass_has_no_infinite_part() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.0, -3.0]);
        let q = quasi_weierstrass_oracle(&DMatrix::identity(2, 2), &a).unwrap();
        assert_eq!((q.n_f, q.nu), (2, 0));
        let (pl, pr) = q.projectors().unwrap();
        assert!((pl - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
        assert!((pr - DMatrix::<f64>::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn purely_algebraic_pencil() {
        let q = quasi_weierstrass_oracle(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!((q.n_f, q.nu), (0, 1));
        assert!(q.nnil.norm() < 1e-14);
        let m = q.markov(&DMatrix::from_element(2, 1, 1.0), &DMatrix::from_element(1, 2, 1.0)).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m[0][(0, 0)] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn index_two_chain() {
        // x1' = -x1 + x2, 0 = x3 - u... a nilpotent chain of length two
        let e = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let a = DMatrix::from_row_slice(3, 3, &[-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let q = quasi_weierstrass_oracle(&e, &a).unwrap();
        assert_eq!((q.n_f, q.nu), (1, 2));
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 1.0]);
        let c = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        // G(s) = 1/(s+1) + (sN - I)^{-1} block: x2 = -s x3' ... check at a point
        let s = Complex64::new(0.3, 2.0);
        let g = q.transfer(&b, &c, s).unwrap();
        let sys = crate::param_system::ParametricDaeSystem::from_dense(&e, &a, &b, &c, 2).unwrap();
        let g2 = sys.transfer_function(&[], s).unwrap();
        assert!((g - g2).norm() < 1e-12);
        let m = q.markov(&b, &c).unwrap();
        // polynomial part is -s
        assert!(m[0].norm() < 1e-12 && (m[1][(0, 0)] + 1.0).abs() < 1e-12);
    }
}
