//! Sparse direct solvers: reverse Cuthill-McKee reordering followed by a
//! banded LU (partial pivoting) or banded Cholesky factorization.

use std::cell::{Cell, RefCell};
use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use nalgebra_sparse::CscMatrix;

use super::Field;
use crate::error::{Error, Result};

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
    static BY_DIM: RefCell<BTreeMap<usize, usize>> = const { RefCell::new(BTreeMap::new()) };
}

/// Number of sparse factorizations performed on the current thread.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.with(|c| c.get())
}

/// Number of factorizations of matrices with at least `dim` rows on the
/// current thread.
pub fn factorization_count_at_least(dim: usize) -> usize {
    BY_DIM.with(|m| m.borrow().range(dim..).map(|(_, c)| *c).sum())
}

fn bump(n: usize) {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
    BY_DIM.with(|m| *m.borrow_mut().entry(n).or_insert(0) += 1);
}

/// Reverse Cuthill-McKee ordering of the symmetrized pattern.
/// Returns `perm` with `perm[new] = old`.
pub fn rcm<T>(a: &CscMatrix<T>) -> Vec<usize> {
    let n = a.nrows();
    let mut adj = vec![Vec::new(); n];
    for (i, j, _) in a.triplet_iter() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let bfs = |start: usize, visited: &mut Vec<bool>, out: &mut Vec<usize>| -> (usize, usize) {
        // returns (last node, eccentricity)
        let mut q = VecDeque::new();
        q.push_back((start, 0usize));
        visited[start] = true;
        let (mut last, mut ecc) = (start, 0);
        while let Some((v, d)) = q.pop_front() {
            out.push(v);
            if d > ecc || (d == ecc && deg[v] < deg[last]) {
                ecc = d;
                last = v;
            }
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nb.sort_by_key(|&w| deg[w]);
            for w in nb {
                visited[w] = true;
                q.push_back((w, d + 1));
            }
        }
        (last, ecc)
    };
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start node
        let mut start = seed;
        let mut ecc = 0;
        for _ in 0..4 {
            let mut vis = visited.clone();
            let mut tmp = Vec::new();
            let (far, e) = bfs(start, &mut vis, &mut tmp);
            if e <= ecc && start != seed {
                break;
            }
            ecc = e;
            start = far;
        }
        bfs(start, &mut visited, &mut order);
    }
    order.reverse();
    order
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// LU factorization `P A P^T = L U` of a sparse square matrix stored as a band.
#[derive(Clone, Debug)]
pub struct SparseLu<T> {
    n: usize,
    perm: Vec<usize>,
    kl: usize,
    off: usize,
    ld: usize,
    band: Vec<T>,
    piv: Vec<usize>,
}

impl<T: Field> SparseLu<T> {
    pub fn factor(a: &CscMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("LU of {}x{} matrix", n, a.ncols())));
        }
        bump(n);
        let perm = rcm(a);
        let inv = inverse_perm(&perm);
        let (mut kl, mut ku) = (0usize, 0usize);
        let mut amax = 0.0f64;
        for (i, j, v) in a.triplet_iter() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi > pj {
                kl = kl.max(pi - pj);
            } else {
                ku = ku.max(pj - pi);
            }
            amax = amax.max(v.modulus());
        }
        let off = kl + ku;
        let ld = off + kl + 1;
        let mut band = vec![T::zero(); ld * n.max(1)];
        let idx = |i: usize, j: usize| j * ld + (i + off - j);
        for (i, j, v) in a.triplet_iter() {
            band[idx(inv[i], inv[j])] += *v;
        }
        let mut piv = vec![0; n];
        let tiny = n.max(1) as f64 * f64::EPSILON * f64::EPSILON * amax;
        for j in 0..n {
            let last = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = band[idx(j, j)].modulus();
            for i in j + 1..=last {
                let m = band[idx(i, j)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if best <= tiny || !best.is_finite() {
                return Err(Error::Singular(format!("zero pivot in column {j} of {n}x{n} LU")));
            }
            piv[j] = p;
            let cend = (j + off).min(n - 1);
            if p != j {
                for c in j..=cend {
                    band.swap(idx(j, c), idx(p, c));
                }
            }
            let d = band[idx(j, j)];
            for i in j + 1..=last {
                let l = band[idx(i, j)] / d;
                band[idx(i, j)] = l;
                if l == T::zero() {
                    continue;
                }
                for c in j + 1..=cend {
                    let u = band[idx(j, c)];
                    band[idx(i, c)] -= l * u;
                }
            }
        }
        Ok(SparseLu { n, perm, kl, off, ld, band, piv })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.band[j * self.ld + (i + self.off - j)]
    }

    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(b.nrows(), self.n, "LU solve shape");
        let n = self.n;
        let mut x = DMatrix::zeros(n, b.ncols());
        let mut y = vec![T::zero(); n];
        for c in 0..b.ncols() {
            for k in 0..n {
                y[k] = b[(self.perm[k], c)];
            }
            for j in 0..n {
                let p = self.piv[j];
                if p != j {
                    y.swap(j, p);
                }
                let yj = y[j];
                if yj != T::zero() {
                    for i in j + 1..=(j + self.kl).min(n - 1) {
                        y[i] -= self.at(i, j) * yj;
                    }
                }
            }
            for j in (0..n).rev() {
                y[j] /= self.at(j, j);
                let yj = y[j];
                if yj != T::zero() {
                    for i in j.saturating_sub(self.off)..j {
                        y[i] -= self.at(i, j) * yj;
                    }
                }
            }
            for k in 0..n {
                x[(self.perm[k], c)] = y[k];
            }
        }
        x
    }
}

/// Cholesky factorization of a sparse symmetric positive definite matrix.
#[derive(Clone, Debug)]
pub struct SparseCholesky {
    n: usize,
    perm: Vec<usize>,
    kd: usize,
    // lower band, column major: L(i, j) at j * (kd + 1) + (i - j)
    band: Vec<f64>,
}

impl SparseCholesky {
    pub fn factor(a: &CscMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("Cholesky of {}x{} matrix", n, a.ncols())));
        }
        bump(n);
        let perm = rcm(a);
        let inv = inverse_perm(&perm);
        let mut kd = 0;
        for (i, j, _) in a.triplet_iter() {
            kd = kd.max(inv[i].abs_diff(inv[j]));
        }
        let ld = kd + 1;
        let mut band = vec![0.0; ld * n.max(1)];
        for (i, j, v) in a.triplet_iter() {
            let (pi, pj) = (inv[i], inv[j]);
            if pi >= pj {
                band[pj * ld + (pi - pj)] += *v;
            }
        }
        for j in 0..n {
            let d = band[j * ld];
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Definiteness(format!("non-positive pivot {d:e} at {j}")));
            }
            let d = d.sqrt();
            band[j * ld] = d;
            let last = (j + kd).min(n - 1);
            for i in j + 1..=last {
                band[j * ld + (i - j)] /= d;
            }
            for c in j + 1..=last {
                let lcj = band[j * ld + (c - j)];
                if lcj == 0.0 {
                    continue;
                }
                for i in c..=last {
                    band[c * ld + (i - c)] -= band[j * ld + (i - j)] * lcj;
                }
            }
        }
        Ok(SparseCholesky { n, perm, kd, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve<T: Field>(&self, b: &DMatrix<T>) -> DMatrix<T> {
        assert_eq!(b.nrows(), self.n, "Cholesky solve shape");
        let (n, kd, ld) = (self.n, self.kd, self.kd + 1);
        let mut x = DMatrix::zeros(n, b.ncols());
        let mut y = vec![T::zero(); n];
        for c in 0..b.ncols() {
            for k in 0..n {
                y[k] = b[(self.perm[k], c)];
            }
            for j in 0..n {
                y[j] /= T::from_real(self.band[j * ld]);
                let yj = y[j];
                for i in j + 1..=(j + kd).min(n - 1) {
                    y[i] -= T::from_real(self.band[j * ld + (i - j)]) * yj;
                }
            }
            for j in (0..n).rev() {
                let mut s = y[j];
                for i in j + 1..=(j + kd).min(n - 1) {
                    s -= T::from_real(self.band[j * ld + (i - j)]) * y[i];
                }
                y[j] = s / T::from_real(self.band[j * ld]);
            }
            for k in 0..n {
                x[(self.perm[k], c)] = y[k];
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sparse::{from_triplets, lincomb, to_dense};
    use num_complex::Complex64;
    use proptest::prelude::*;

    fn laplace_2d(m: usize) -> CscMatrix<f64> {
        let id = |i: usize, j: usize| i * m + j;
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..m {
                t.push((id(i, j), id(i, j), 4.0));
                if i + 1 < m {
                    t.push((id(i, j), id(i + 1, j), -1.0));
                    t.push((id(i + 1, j), id(i, j), -1.0));
                }
                if j + 1 < m {
                    t.push((id(i, j), id(i, j + 1), -1.0));
                    t.push((id(i, j + 1), id(i, j), -1.0));
                }
            }
        }
        from_triplets(m * m, m * m, t)
    }

    #[test]
    fn cholesky_solves_laplacian() {
        let a = laplace_2d(7);
        let f = SparseCholesky::factor(&a).unwrap();
        let b = DMatrix::from_fn(49, 2, |i, j| (i as f64 + 1.0).sin() + j as f64);
        let x = f.solve(&b);
        assert!((to_dense(&a) * x - b).norm() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = from_triplets(2, 2, [(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(SparseCholesky::factor(&a), Err(Error::Definiteness(_))));
    }

    #[test]
    fn lu_handles_zero_diagonal_saddle_point() {
        // [[I, g], [g^T, 0]]
        let n = 5;
        let mut t: Vec<_> = (0..n).map(|i| (i, i, 2.0)).collect();
        t.push((0, n, 1.0));
        t.push((n, 0, 1.0));
        t.push((n - 1, n, -1.0));
        t.push((n, n - 1, -1.0));
        let a = from_triplets(n + 1, n + 1, t);
        let lu = SparseLu::factor(&a).unwrap();
        let b = DMatrix::from_fn(n + 1, 1, |i, _| i as f64 - 2.0);
        assert!((to_dense(&a) * lu.solve(&b) - b).norm() < 1e-13);
    }

    #[test]
    fn lu_detects_singular() {
        let a = from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(matches!(SparseLu::factor(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn complex_shifted_solve() {
        let a = laplace_2d(5);
        let e = from_triplets(25, 25, (0..25).map(|i| (i, i, 1.0)));
        let s = Complex64::new(0.3, 2.0);
        let m = lincomb(25, 25, &[(s, &e), (Complex64::new(1.0, 0.0), &a)]);
        let lu = SparseLu::factor(&m).unwrap();
        let b = DMatrix::from_fn(25, 1, |i, _| Complex64::new(i as f64, 1.0));
        let x = lu.solve(&b);
        let md = DMatrix::from_fn(25, 25, |i, j| to_dense(&a)[(i, j)] * Complex64::new(1.0, 0.0) + if i == j { s } else { Complex64::new(0.0, 0.0) });
        assert!((md * x - b).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn lu_matches_dense_on_random_sparse(seed in 0u64..500, n in 2usize..30) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut t: Vec<_> = (0..n).map(|i| (i, i, 4.0 + rng.gen::<f64>())).collect();
            for _ in 0..2 * n {
                let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
                t.push((i, j, rng.gen_range(-1.0..1.0)));
            }
            let a = from_triplets(n, n, t);
            let b = DMatrix::from_fn(n, 2, |_, _| rng.gen_range(-1.0..1.0));
            let x = SparseLu::factor(&a).unwrap().solve(&b);
            prop_assert!((to_dense(&a) * x - &b).norm() <= 1e-10 * b.norm());
        }
    }
}
