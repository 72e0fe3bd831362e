//! Low-rank ADI iteration for projected continuous-time Lyapunov equations.

use std::collections::HashMap;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::shifts::{generate_shifts, ShiftSequence};
use super::{AdiOptions, LowRankFactor, Side};
use crate::error::{Error, Result};
use crate::linalg::dense::{lowrank_fro, outer_fro, realify, to_complex};
use crate::linalg::sparse::{self, Csc};
use crate::linalg::{Field, SparseLu};
use crate::param_system::SystemMatrices;
use crate::projectors::ProjectorContext;

const PROJECTION_DEFECT_TOL: f64 = 1e-8;

/// `|| A Z Z^H E^T + E Z Z^H A^T + PiB PiB^T ||_F` from the Gram structure
/// of `[A Z, E Z, PiB]`.
pub fn residual_norm_lowrank<T: Field>(e: &Csc, a: &Csc, z: &DMatrix<T>, pib: &DMatrix<T>) -> Result<f64> {
    let k = z.ncols();
    let id = DMatrix::<T>::identity(k, k);
    residual_norm_general(e, a, &[(z.clone(), id)], pib, pib)
}

/// Residual norm of `X = sum_j U_j K_j U_j^H` for the equation with
/// right-hand side `B_l B_r^H`.
pub fn residual_norm_general<T: Field>(
    e: &Csc,
    a: &Csc,
    parts: &[(DMatrix<T>, DMatrix<T>)],
    b_l: &DMatrix<T>,
    b_r: &DMatrix<T>,
) -> Result<f64> {
    let n = e.nrows();
    if b_l.nrows() != n || b_r.nrows() != n || b_l.ncols() != b_r.ncols() {
        return Err(Error::Dimension("residual right-hand side".into()));
    }
    let k: usize = parts.iter().map(|(u, _)| u.ncols()).sum();
    let m = b_l.ncols();
    // F = [A U, E U, B_l, B_r], R = F W F^H
    let mut f = DMatrix::<T>::zeros(n, 2 * k + 2 * m);
    let mut w = DMatrix::<T>::zeros(2 * k + 2 * m, 2 * k + 2 * m);
    let mut off = 0;
    for (u, kk) in parts {
        if u.nrows() != n || kk.shape() != (u.ncols(), u.ncols()) {
            return Err(Error::Dimension("residual factor".into()));
        }
        let c = u.ncols();
        f.columns_mut(off, c).copy_from(&sparse::mul(a, u));
        f.columns_mut(k + off, c).copy_from(&sparse::mul(e, u));
        w.view_mut((off, k + off), (c, c)).copy_from(kk);
        w.view_mut((k + off, off), (c, c)).copy_from(kk);
        off += c;
    }
    f.columns_mut(2 * k, m).copy_from(b_l);
    f.columns_mut(2 * k + m, m).copy_from(b_r);
    w.view_mut((2 * k, 2 * k + m), (m, m)).fill_with_identity();
    Ok(lowrank_fro(&f, &w))
}

/// Column compression keeping `||Z Z^H - Z' Z'^H||_F <= tol ||Z Z^H||_F`.
pub fn compress_factor(z: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (n, k) = z.shape();
    if k == 0 {
        return z.clone();
    }
    let (q, r) = if n > k {
        let qr = z.clone().qr();
        (Some(qr.q()), qr.r())
    } else {
        (None, z.clone())
    };
    let svd = crate::linalg::dense::svd(r, true, false);
    let s = svd.singular_values.clone();
    let u = svd.u.unwrap();
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let s4: Vec<f64> = idx.iter().map(|&i| s[i].powi(4)).collect();
    let total: f64 = s4.iter().sum::<f64>();
    if total == 0.0 {
        return DMatrix::zeros(n, 0);
    }
    // smallest r with tail(s^4) <= tol^2 * total
    let mut tail = 0.0;
    let mut keep = s4.len();
    for j in (0..s4.len()).rev() {
        if (tail + s4[j]).sqrt() <= tol * total.sqrt() {
            tail += s4[j];
            keep = j;
        } else {
            break;
        }
    }
    let mut small = DMatrix::zeros(u.nrows(), keep);
    for (c, &i) in idx.iter().take(keep).enumerate() {
        small.set_column(c, &(u.column(i) * s[i]));
    }
    match q {
        Some(q) => q * small,
        None => small,
    }
}

struct ShiftedSolver<'a> {
    e: &'a Csc,
    a: &'a Csc,
    cache: HashMap<usize, Option<SparseLu<Complex64>>>,
}

impl<'a> ShiftedSolver<'a> {
    fn get(&mut self, idx: usize, p: Complex64) -> Option<&SparseLu<Complex64>> {
        let (e, a) = (self.e, self.a);
        self.cache
            .entry(idx)
            .or_insert_with(|| {
                let n = e.nrows();
                let m = sparse::lincomb(n, n, &[(Complex64::new(1.0, 0.0), e), (p, a)]);
                SparseLu::factor(&m).ok()
            })
            .as_ref()
    }
}

struct Iterate {
    z_l: DMatrix<Complex64>,
    z_r: DMatrix<Complex64>,
    history: Vec<f64>,
    used: Vec<Complex64>,
}

fn run_adi(
    sys: &SystemMatrices,
    b_l: &DMatrix<f64>,
    b_r: Option<&DMatrix<f64>>,
    ctx: &ProjectorContext,
    shifts: &ShiftSequence,
    opts: &AdiOptions,
) -> Result<Iterate> {
    opts.validate()?;
    shifts.validate()?;
    let n = sys.n();
    if b_l.nrows() != n || b_r.is_some_and(|b| b.shape() != b_l.shape()) {
        return Err(Error::Dimension(format!("right-hand side {:?} for N = {n}", b_l.shape())));
    }
    let mut w_l = to_complex(b_l);
    let mut w_r = b_r.map(to_complex);
    let norm_of = |l: &DMatrix<Complex64>, r: &Option<DMatrix<Complex64>>| match r {
        Some(r) => outer_fro(l, r),
        None => (l.adjoint() * l).norm(),
    };
    let rhs = norm_of(&w_l, &w_r);
    let mut it = Iterate { z_l: DMatrix::zeros(n, 0), z_r: DMatrix::zeros(n, 0), history: vec![], used: vec![] };
    if rhs == 0.0 {
        return Ok(it);
    }
    let mut solver = ShiftedSolver { e: &sys.e, a: &sys.a, cache: HashMap::new() };
    let (mut z_sq, mut defect_sq) = (0.0f64, 0.0f64);
    let ns = shifts.shifts.len();
    let mut rejected = 0;
    let mut k = 0;
    while it.history.len() < opts.max_iterations {
        let idx = k % ns;
        let p = shifts.shifts[idx];
        k += 1;
        let Some(lu) = solver.get(idx, p) else {
            rejected += 1;
            log::warn!("shift {p} rejected (singular E + pA)");
            if rejected >= ns {
                return Err(Error::Singular("every shift gives a singular E + pA".into()));
            }
            continue;
        };
        let kappa = Complex64::new((-2.0 * p.re).sqrt(), 0.0);
        let coef = Complex64::new(2.0 * p.re, 0.0) / p.conj();
        let y_l = lu.solve(&w_l);
        w_l -= sparse::mul(&sys.e, &y_l) * coef;
        let block_l = &y_l * kappa;
        let y_r = w_r.as_ref().map(|w| lu.solve(w));
        if let (Some(w), Some(y)) = (w_r.as_mut(), y_r.as_ref()) {
            *w -= sparse::mul(&sys.e, y) * coef;
        }
        // projection defect of the new columns
        let pr = ctx.apply_right(&block_l)?;
        defect_sq += (&pr - &block_l).norm_squared();
        z_sq += block_l.norm_squared();
        if defect_sq.sqrt() > PROJECTION_DEFECT_TOL * z_sq.sqrt() {
            return Err(Error::Accuracy(format!(
                "ADI iterate left the deflating subspace: defect {:e} relative to {:e}",
                defect_sq.sqrt(),
                z_sq.sqrt()
            )));
        }
        it.z_l = hcat(&it.z_l, &block_l);
        if let Some(y) = y_r {
            it.z_r = hcat(&it.z_r, &(y * kappa));
        }
        it.used.push(p);
        let res = norm_of(&w_l, &w_r) / rhs;
        it.history.push(res);
        if res <= opts.residual_tolerance {
            return Ok(it);
        }
    }
    let tail: Vec<String> = it.history.iter().rev().take(5).rev().map(|r| format!("{r:.3e}")).collect();
    Err(Error::NotConverged(format!(
        "ADI reached {} iterations with relative residual {:.3e} (last: {})",
        opts.max_iterations,
        it.history.last().copied().unwrap_or(f64::NAN),
        tail.join(", ")
    )))
}

fn hcat<T: Field>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Solves `E P A^T + A P E^T = -PiB PiB^T`, `P = Pi_r P Pi_r^T` for a factor
/// `P ~ Z Z^T`. `pib` must already lie in the range of `Pi_l`.
pub fn lradi_projected(
    sys: &SystemMatrices,
    pib: &DMatrix<f64>,
    ctx: &ProjectorContext,
    shifts: &ShiftSequence,
    opts: &AdiOptions,
    side: Side,
) -> Result<LowRankFactor> {
    let it = run_adi(sys, pib, None, ctx, shifts, opts)?;
    let mut z = compress_factor(&realify(&it.z_l), opts.compression_tolerance);
    if let Some(r) = opts.max_rank {
        z = z.columns(0, r.min(z.ncols())).into_owned();
    }
    Ok(LowRankFactor { z, side, residual_history: it.history, mu: ctx.mu().to_vec(), shifts: it.used })
}

/// Variant for a nonsymmetric right-hand side `B_l B_r^T`; returns real
/// factors with `X ~ Z_l Z_r^T`, built with one shift schedule.
pub fn lradi_nonsymmetric(
    sys: &SystemMatrices,
    b_l: &DMatrix<f64>,
    b_r: &DMatrix<f64>,
    ctx: &ProjectorContext,
    shifts: &ShiftSequence,
    opts: &AdiOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<f64>)> {
    let it = run_adi(sys, b_l, Some(b_r), ctx, shifts, opts)?;
    Ok((realify(&it.z_l), realify(&it.z_r), it.history))
}

/// Generates shifts and solves for one Gramian factor at the parameter of
/// `ctx`. For the observability side, `sys` and `ctx` are dualized here.
pub fn solve_gramian(sys: &SystemMatrices, ctx: &ProjectorContext, side: Side, opts: &AdiOptions) -> Result<LowRankFactor> {
    let (s, c) = match side {
        Side::Controllability => (sys.clone(), ctx.clone()),
        Side::Observability => (sys.dual(), ctx.transposed()),
    };
    let pib = c.apply_left(&s.b)?;
    if pib.norm() == 0.0 {
        return Ok(LowRankFactor::empty(s.n(), side, ctx.mu()));
    }
    let shifts = generate_shifts(&s, &c, opts.shift_count)?;
    lradi_projected(&s, &pib, &c, &shifts, opts, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_system::ParametricDaeSystem;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn scalar_sys(b: f64) -> SystemMatrices {
        ParametricDaeSystem::from_dense(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, -1.0),
            &DMatrix::from_element(1, 1, b),
            &DMatrix::from_element(1, 1, 1.0),
            0,
        )
        .unwrap()
        .at(&[])
        .unwrap()
    }

    fn ident_ctx(n: usize) -> ProjectorContext {
        ProjectorContext::dense(&[], DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap()
    }

    #[test]
    fn scalar_one_step_exact() {
        let sys = scalar_sys(2f64.sqrt());
        let f = lradi_projected(&sys, &sys.b, &ident_ctx(1), &ShiftSequence::real(&[-1.0]).unwrap(), &AdiOptions::default(), Side::Controllability)
            .unwrap();
        assert_eq!(f.residual_history.len(), 1);
        assert!(f.residual_history[0] < 1e-15);
        assert!((f.gramian()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(residual_norm_lowrank(&sys.e, &sys.a, &f.z, &sys.b).unwrap() < 1e-14);
    }

    #[test]
    fn zero_rhs_gives_empty_factor() {
        let sys = scalar_sys(0.0);
        let f = lradi_projected(&sys, &sys.b, &ident_ctx(1), &ShiftSequence::real(&[-1.0]).unwrap(), &AdiOptions::default(), Side::Controllability)
            .unwrap();
        assert_eq!(f.rank(), 0);
        let (zl, zr, _) =
            lradi_nonsymmetric(&sys, &sys.b, &sys.b, &ident_ctx(1), &ShiftSequence::real(&[-1.0]).unwrap(), &AdiOptions::default()).unwrap();
        assert_eq!((zl.ncols(), zr.ncols()), (0, 0));
    }

    #[test]
    fn residual_of_zero_factor() {
        let sys = scalar_sys(3.0);
        let z = DMatrix::<f64>::zeros(1, 0);
        assert!((residual_norm_lowrank(&sys.e, &sys.a, &z, &sys.b).unwrap() - 9.0).abs() < 1e-13);
    }

    fn random_stable(n: usize, seed: u64) -> SystemMatrices {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let a = -(&m * m.transpose()) - DMatrix::identity(n, n) * (n as f64) + DMatrix::from_fn(n, n, |i, j| if i < j { 0.3 } else if i > j { -0.3 } else { 0.0 });
        let e = DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |i, j| if i == j { 0.5 * (i as f64) / n as f64 } else { 0.0 });
        let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
        ParametricDaeSystem::from_dense(&e, &a, &b, &DMatrix::zeros(1, n), 0).unwrap().at(&[]).unwrap()
    }

    #[test]
    fn residual_matches_dense_assembly() {
        let sys = random_stable(40, 3);
        let z = DMatrix::from_fn(40, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
        let (e, a) = (sparse::to_dense(&sys.e), sparse::to_dense(&sys.a));
        let p = &z * z.transpose();
        let dense = (&a * &p * e.transpose() + &e * &p * a.transpose() + &sys.b * sys.b.transpose()).norm();
        let lr = residual_norm_lowrank(&sys.e, &sys.a, &z, &sys.b).unwrap();
        assert!((lr - dense).abs() <= 1e-10 * dense);
    }

    #[test]
    fn nonsymmetric_with_equal_sides_matches_symmetric() {
        let sys = random_stable(15, 5);
        let ctx = ident_ctx(15);
        let shifts = generate_shifts(&sys, &ctx, 6).unwrap();
        let opts = AdiOptions { compression_tolerance: 1e-15, ..Default::default() };
        let f = lradi_projected(&sys, &sys.b, &ctx, &shifts, &opts, Side::Controllability).unwrap();
        let (zl, zr, _) = lradi_nonsymmetric(&sys, &sys.b, &sys.b, &ctx, &shifts, &opts).unwrap();
        let p = f.gramian();
        assert!((&zl * zr.transpose() - &p).norm() <= 1e-12 * p.norm());
    }

    #[test]
    fn compress_drops_duplicates() {
        let base = DMatrix::from_fn(20, 3, |i, j| ((i + 1) as f64).powi(j as i32 % 2) * ((i * j) as f64).cos());
        let mut z = DMatrix::zeros(20, 4);
        z.columns_mut(0, 3).copy_from(&base);
        z.set_column(3, &base.column(1));
        let c = compress_factor(&z, 1e-12);
        assert!(c.ncols() <= 3);
        let (p, pc) = (&z * z.transpose(), &c * c.transpose());
        assert!((p - &pc).norm() <= 1e-12 * pc.norm());
    }

    #[test]
    fn compress_finds_known_rank() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let l = DMatrix::<f64>::from_fn(50, 5, |_, _| rng.gen_range(-1.0..1.0));
        let r = DMatrix::<f64>::from_fn(5, 40, |_, _| rng.gen_range(-1.0..1.0));
        let z = l * r;
        let c = compress_factor(&z, 1e-10);
        assert_eq!(c.ncols(), 5);
        let q = DMatrix::<f64>::identity(6, 6);
        assert_eq!(compress_factor(&q, 1e-8).ncols(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn compression_bound_holds(seed in 0u64..1000, k in 1usize..12, tol in 1e-10f64..1e-2) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let z = DMatrix::<f64>::from_fn(25, k, |i, j| rng.gen_range(-1.0..1.0) * 0.5f64.powi((i + j) as i32 % 9));
            let c = compress_factor(&z, tol);
            let p = &z * z.transpose();
            prop_assert!((&p - &c * c.transpose()).norm() <= tol * p.norm() * (1.0 + 1e-8) + 1e-14);
        }
    }
}
