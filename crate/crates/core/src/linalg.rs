//! Dense linear algebra used by the propagation solver and the diagnostics.
//!
//! Matrices are row-major `ndarray` arrays. Trailing updates of the blocked
//! Cholesky factorization and all large products go through
//! `ndarray::linalg::general_mat_mul`, which reaches an optimized GEMM for
//! `f32`/`f64`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

const BLOCK: usize = 96;

/// Squared Euclidean distances between all rows of `x`.
///
/// Uses the Gram-matrix identity on column-centered data, then recomputes
/// directly every pair where cancellation could dominate, so that identical
/// rows give an exact zero. The result is exactly symmetric with a zero
/// diagonal.
pub fn pairwise_sq_dists<T: Real>(x: ArrayView2<'_, T>) -> Array2<T> {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
    let centered = &x - &mean.insert_axis(Axis(0));
    let norms: Array1<T> = centered.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut gram = Array2::<T>::zeros((n, n));
    general_mat_mul(T::one(), &centered, &centered.t(), T::zero(), &mut gram);

    let two = T::lit(2.0);
    let guard = T::lit(1e-6);
    let mut out = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let scale = norms[i] + norms[j];
            let mut d = scale - two * gram[[i, j]];
            if d <= guard * scale {
                d = direct_sq_dist(centered.row(i), centered.row(j));
            }
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

fn direct_sq_dist<T: Real>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    a.iter().zip(b.iter()).map(|(&u, &v)| (u - v) * (u - v)).fold(T::zero(), |acc, v| acc + v)
}

/// `tr(AB)` for square matrices of equal size.
pub fn trace_product<T: Real>(a: ArrayView2<'_, T>, b: ArrayView2<'_, T>) -> T {
    let mut acc = T::zero();
    for i in 0..a.nrows() {
        acc += a.row(i).dot(&b.column(i));
    }
    acc
}

/// Failure of a factorization, with the offending pivot index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PivotFailure {
    pub index: usize,
}

/// In-place lower Cholesky factorization. On success the lower triangle of
/// `a` holds `L` with `LLᵀ = A`; the strict upper triangle is zeroed.
pub fn cholesky_in_place<T: Real>(a: &mut Array2<T>) -> Result<(), PivotFailure> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky needs a square matrix");
    let mut k0 = 0;
    while k0 < n {
        let k1 = (k0 + BLOCK).min(n);
        factor_diagonal_block(a, k0, k1)?;
        if k1 < n {
            solve_panel(a, k0, k1);
            update_trailing(a, k0, k1);
        }
        k0 = k1;
    }
    for i in 0..n {
        for j in (i + 1)..n {
            a[[i, j]] = T::zero();
        }
    }
    Ok(())
}

fn factor_diagonal_block<T: Real>(a: &mut Array2<T>, k0: usize, k1: usize) -> Result<(), PivotFailure> {
    for j in k0..k1 {
        let mut diag = a[[j, j]];
        for m in k0..j {
            diag -= a[[j, m]] * a[[j, m]];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return Err(PivotFailure { index: j });
        }
        let root = diag.sqrt();
        a[[j, j]] = root;
        for i in (j + 1)..k1 {
            let mut v = a[[i, j]];
            for m in k0..j {
                v -= a[[i, m]] * a[[j, m]];
            }
            a[[i, j]] = v / root;
        }
    }
    Ok(())
}

// Rows below the diagonal block: X L11ᵀ = A21.
fn solve_panel<T: Real>(a: &mut Array2<T>, k0: usize, k1: usize) {
    let n = a.nrows();
    let l11 = a.slice(s![k0..k1, k0..k1]).to_owned();
    for i in k1..n {
        let mut row = a.slice_mut(s![i, k0..k1]);
        for j in 0..(k1 - k0) {
            let mut v = row[j];
            for m in 0..j {
                v -= row[m] * l11[[j, m]];
            }
            row[j] = v / l11[[j, j]];
        }
    }
}

// Lower part of A22 -= P Pᵀ, by row blocks.
fn update_trailing<T: Real>(a: &mut Array2<T>, k0: usize, k1: usize) {
    let n = a.nrows();
    let (panel, mut trailing) = a.multi_slice_mut((s![k1.., k0..k1], s![k1.., k1..]));
    let panel = panel.view();
    let m = n - k1;
    let row_block = 256;
    let mut r0 = 0;
    while r0 < m {
        let r1 = (r0 + row_block).min(m);
        let lhs = panel.slice(s![r0..r1, ..]);
        let rhs = panel.slice(s![0..r1, ..]);
        let mut target = trailing.slice_mut(s![r0..r1, 0..r1]);
        general_mat_mul(-T::one(), &lhs, &rhs.t(), T::one(), &mut target);
        r0 = r1;
    }
}

/// Solves `L Lᵀ X = B` in place given the lower factor.
pub fn cholesky_solve_in_place<T: Real>(l: &Array2<T>, b: &mut Array2<T>) {
    let n = l.nrows();
    let k = b.ncols();
    for i in 0..n {
        let li = l.row(i);
        for c in 0..k {
            let mut v = b[[i, c]];
            for j in 0..i {
                v -= li[j] * b[[j, c]];
            }
            b[[i, c]] = v / li[i];
        }
    }
    for i in (0..n).rev() {
        let li = l.row(i);
        for c in 0..k {
            let xi = b[[i, c]] / li[i];
            b[[i, c]] = xi;
            for j in 0..i {
                let v = b[[j, c]];
                b[[j, c]] = v - li[j] * xi;
            }
        }
    }
}

/// LU factorization with partial pivoting, `PA = LU`.
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: Array2<T>,
    perm: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn factor(mut a: Array2<T>) -> Result<Self, (PivotFailure, T)> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "lu needs a square matrix");
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = a[[k, k]].abs();
            for i in (k + 1)..n {
                let v = a[[i, k]].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if !(best > T::zero()) || !best.is_finite() {
                let cond = pivot_condition(&a, k);
                return Err((PivotFailure { index: k }, cond));
            }
            if piv != k {
                swap_rows(&mut a, k, piv);
                perm.swap(k, piv);
            }
            let (top, mut bottom) = a.view_mut().split_at(Axis(0), k + 1);
            let pivot_row = top.row(k);
            let pivot = pivot_row[k];
            let tail = pivot_row.slice(s![(k + 1)..]);
            for mut row in bottom.rows_mut() {
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != T::zero() {
                    row.slice_mut(s![(k + 1)..]).scaled_add(-factor, &tail);
                }
            }
        }
        Ok(Self { lu: a, perm })
    }

    /// Ratio of the largest to the smallest pivot magnitude, a cheap
    /// condition indicator.
    pub fn pivot_ratio(&self) -> T {
        pivot_condition(&self.lu, self.lu.nrows())
    }

    pub fn solve(&self, b: &Array2<T>) -> Array2<T> {
        let n = self.lu.nrows();
        let k = b.ncols();
        let mut x = Array2::<T>::zeros((n, k));
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).assign(&b.row(p));
        }
        for i in 0..n {
            for j in 0..i {
                let l = self.lu[[i, j]];
                if l != T::zero() {
                    for c in 0..k {
                        let v = x[[j, c]];
                        x[[i, c]] -= l * v;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for c in 0..k {
                let mut v = x[[i, c]];
                for j in (i + 1)..n {
                    v -= self.lu[[i, j]] * x[[j, c]];
                }
                x[[i, c]] = v / self.lu[[i, i]];
            }
        }
        x
    }
}

fn swap_rows<T: Real>(a: &mut Array2<T>, i: usize, j: usize) {
    let (mut top, mut bottom) = a.view_mut().split_at(Axis(0), j);
    let mut ri = top.row_mut(i);
    let mut rj = bottom.row_mut(0);
    for (x, y) in ri.iter_mut().zip(rj.iter_mut()) {
        std::mem::swap(x, y);
    }
}

fn pivot_condition<T: Real>(a: &Array2<T>, upto: usize) -> T {
    let mut hi = T::zero();
    let mut lo = T::infinity();
    for k in 0..upto.min(a.nrows()) {
        let v = a[[k, k]].abs();
        hi = hi.max(v);
        lo = lo.min(v);
    }
    if upto < a.nrows() || lo == T::zero() {
        return T::infinity();
    }
    hi / lo
}

/// Factorization of a symmetric system: Cholesky when the matrix is
/// positive definite, LU with partial pivoting otherwise.
#[derive(Debug, Clone)]
pub enum SymmetricFactor<T> {
    Cholesky(Array2<T>),
    Lu(Lu<T>),
}

impl<T: Real> SymmetricFactor<T> {
    /// Factors `a`; on failure returns the pivot ratio reached by LU.
    pub fn factor(a: Array2<T>) -> Result<Self, T> {
        let mut chol = a.clone();
        if cholesky_in_place(&mut chol).is_ok() {
            return Ok(Self::Cholesky(chol));
        }
        drop(chol);
        Lu::factor(a).map(Self::Lu).map_err(|(_, cond)| cond)
    }

    pub fn solve(&self, b: &Array2<T>) -> Array2<T> {
        match self {
            Self::Cholesky(l) => {
                let mut x = b.clone();
                cholesky_solve_in_place(l, &mut x);
                x
            }
            Self::Lu(lu) => lu.solve(b),
        }
    }
}

/// Largest singular value by power iteration on `AᵀA`, from a seeded
/// start vector. Stops when the relative change drops below `tol`.
pub fn spectral_norm<T: Real>(a: ArrayView2<'_, T>, tol: f64, max_iter: usize, seed: u64) -> T {
    let (m, n) = a.dim();
    if m == 0 || n == 0 {
        return T::zero();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Array1<T> = (0..n).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect();
    let nv = v.dot(&v).sqrt();
    if nv == T::zero() {
        v.fill(T::one());
    }
    v /= v.dot(&v).sqrt();
    let tol = T::lit(tol);
    let mut sigma = T::zero();
    for _ in 0..max_iter {
        let u = a.dot(&v);
        let next = u.dot(&u).sqrt();
        if next == T::zero() {
            return T::zero();
        }
        let w = a.t().dot(&u);
        let wn = w.dot(&w).sqrt();
        if wn == T::zero() {
            return next;
        }
        v = w / wn;
        if (next - sigma).abs() <= tol * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Eigendecomposition of a small symmetric matrix by cyclic Jacobi sweeps.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<'_, T>) -> (Array1<T>, Array2<T>) {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = m[[i, j]] * m[[i, j]];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - sn * mkq;
                    m[[k, q]] = sn * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - sn * mqk;
                    m[[q, k]] = sn * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
