//! Small dense linear algebra: row-major matrices, Householder QR,
//! Cholesky and a pivoted Cholesky root for positive semidefinite matrices.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row-major storage.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!("matrix storage has {} entries, expected {rows}x{cols}", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix<T>) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::usage(format!(
                "shape mismatch {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ v`.
    pub fn tr_matvec(&self, v: &[T]) -> Vec<T> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `selfᵀ self`.
    pub fn gram(&self) -> Self {
        let mut g = Self::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..self.cols {
                let ra = r[a];
                if ra == T::zero() {
                    continue;
                }
                let g_row = &mut g.data[a * self.cols..(a + 1) * self.cols];
                for b in a..self.cols {
                    g_row[b] += ra * r[b];
                }
            }
        }
        for a in 0..self.cols {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Matrix<T>) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::usage("shape mismatch in matrix addition"));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// Stacks `other` below `self`.
    pub fn vstack(&self, other: &Matrix<T>) -> Result<Self> {
        if self.rows > 0 && other.rows > 0 && self.cols != other.cols {
            return Err(Error::usage("column mismatch in vstack"));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix { rows: self.rows + other.rows, cols, data })
    }

    /// Row-wise Kronecker product: row i of the result is `kron(a_i, b_i)`.
    pub fn row_kron(&self, other: &Matrix<T>) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::usage("row mismatch in row-wise Kronecker product"));
        }
        let cols = self.cols * other.cols;
        let mut out = Self::zeros(self.rows, cols);
        for i in 0..self.rows {
            let dst = out.row_mut(i);
            for (a, &x) in self.row(i).iter().enumerate() {
                for (b, &y) in other.row(i).iter().enumerate() {
                    dst[a * other.cols + b] = x * y;
                }
            }
        }
        Ok(out)
    }

    /// Full Kronecker product.
    pub fn kron(&self, other: &Matrix<T>) -> Self {
        let mut out = Self::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    pub fn max_abs_asymmetry(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn symmetrize(&mut self) {
        let half = T::lit(0.5);
        for i in 0..self.rows {
            for j in 0..i {
                let m = (self[(i, j)] + self[(j, i)]) * half;
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn quadratic_form(&self, v: &[T]) -> T {
        dot(v, &self.matvec(v))
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Householder QR factorisation of a tall matrix (`rows >= cols`).
#[derive(Debug, Clone)]
pub struct Qr<T> {
    m: usize,
    n: usize,
    r: Matrix<T>,
    reflectors: Vec<Vec<T>>,
    betas: Vec<T>,
}

impl<T: Real> Qr<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let (m, n) = (a.nrows(), a.ncols());
        if m < n {
            return Err(Error::usage(format!("QR needs rows >= cols, got {m}x{n}")));
        }
        let mut w = a.clone();
        let mut reflectors = Vec::with_capacity(n);
        let mut betas = Vec::with_capacity(n);
        let mut s = vec![T::zero(); n];
        for k in 0..n {
            let norm = (k..m).map(|i| w[(i, k)] * w[(i, k)]).sum::<T>().sqrt();
            let mut v: Vec<T> = (k..m).map(|i| w[(i, k)]).collect();
            if norm == T::zero() {
                reflectors.push(v);
                betas.push(T::zero());
                continue;
            }
            let alpha = if v[0] > T::zero() { -norm } else { norm };
            v[0] -= alpha;
            let vtv = dot(&v, &v);
            let beta = if vtv > T::zero() { T::lit(2.0) / vtv } else { T::zero() };
            // s_j = sum_i v_i w_ij over the trailing block
            for x in s[k..].iter_mut() {
                *x = T::zero();
            }
            for (off, &vi) in v.iter().enumerate() {
                if vi == T::zero() {
                    continue;
                }
                let row = w.row(k + off);
                for j in k..n {
                    s[j] += vi * row[j];
                }
            }
            for (off, &vi) in v.iter().enumerate() {
                if vi == T::zero() {
                    continue;
                }
                let f = beta * vi;
                let row = w.row_mut(k + off);
                for j in k..n {
                    row[j] -= f * s[j];
                }
            }
            reflectors.push(v);
            betas.push(beta);
        }
        let mut r = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                r[(i, j)] = w[(i, j)];
            }
        }
        Ok(Qr { m, n, r, reflectors, betas })
    }

    /// Upper-triangular factor.
    pub fn r(&self) -> &Matrix<T> {
        &self.r
    }

    /// Applies `Qᵀ` to a vector of length `rows`.
    pub fn apply_qt(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.m);
        let mut out = b.to_vec();
        for k in 0..self.n {
            let v = &self.reflectors[k];
            let beta = self.betas[k];
            if beta == T::zero() {
                continue;
            }
            let s: T = v.iter().zip(&out[k..]).map(|(&a, &b)| a * b).sum();
            let f = beta * s;
            for (o, &vi) in out[k..].iter_mut().zip(v) {
                *o -= f * vi;
            }
        }
        out
    }

    /// Ratio of the largest to the smallest absolute diagonal entry of R.
    pub fn condition_estimate(&self) -> T {
        let diag: Vec<T> = (0..self.n).map(|i| self.r[(i, i)].abs()).collect();
        let max = diag.iter().copied().fold(T::zero(), T::max);
        let min = diag.iter().copied().fold(T::infinity(), T::min);
        if min == T::zero() {
            T::infinity()
        } else {
            max / min
        }
    }

    /// Fails when R is numerically singular.
    pub fn check_rank(&self, rel_tol: T) -> Result<()> {
        let max = (0..self.n).map(|i| self.r[(i, i)].abs()).fold(T::zero(), T::max);
        for i in 0..self.n {
            if self.r[(i, i)].abs() <= rel_tol * max {
                return Err(Error::numerical(format!(
                    "rank-deficient system: pivot {i} is {:.3e} (largest {:.3e}, condition estimate {:.3e})",
                    self.r[(i, i)].abs().to_f64_lossy(),
                    max.to_f64_lossy(),
                    self.condition_estimate().to_f64_lossy()
                )));
            }
        }
        Ok(())
    }

    /// Least-squares solution of `A x ≈ b`.
    pub fn solve_least_squares(&self, b: &[T]) -> Result<Vec<T>> {
        let qtb = self.apply_qt(b);
        solve_upper(&self.r, &qtb[..self.n])
    }
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn solve_upper<T: Real>(r: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = r.ncols();
    let mut x = b[..n].to_vec();
    for i in (0..n).rev() {
        let row = r.row(i);
        let mut acc = x[i];
        for j in i + 1..n {
            acc -= row[j] * x[j];
        }
        if row[i] == T::zero() {
            return Err(Error::numerical(format!("zero pivot at {i} in triangular solve")));
        }
        x[i] = acc / row[i];
    }
    Ok(x)
}

/// Solves `Rᵀ x = b` for upper-triangular `R`.
pub fn solve_upper_transpose<T: Real>(r: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = r.ncols();
    let mut x = b[..n].to_vec();
    for i in 0..n {
        let mut acc = x[i];
        for k in 0..i {
            acc -= r[(k, i)] * x[k];
        }
        if r[(i, i)] == T::zero() {
            return Err(Error::numerical(format!("zero pivot at {i} in triangular solve")));
        }
        x[i] = acc / r[(i, i)];
    }
    Ok(x)
}

/// Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::usage("Cholesky needs a square matrix"));
        }
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::numerical(format!("matrix not positive definite at pivot {j}")));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.l.nrows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut acc = y[i];
            for k in 0..i {
                acc -= self.l[(i, k)] * y[k];
            }
            y[i] = acc / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in i + 1..n {
                acc -= self.l[(k, i)] * y[k];
            }
            y[i] = acc / self.l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.l.nrows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

/// Returns `L` (rank x n) with `P = Lᵀ L` for a positive semidefinite `P`,
/// using a diagonally pivoted Cholesky factorisation.
pub fn psd_root<T: Real>(p: &Matrix<T>) -> Result<Matrix<T>> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::usage("penalty must be square"));
    }
    if p.max_abs_asymmetry() > T::lit(1e-8) * (T::one() + max_abs(p)) {
        return Err(Error::usage("penalty must be symmetric"));
    }
    let mut a = p.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let max_diag = (0..n).map(|i| a[(i, i)]).fold(T::zero(), T::max);
    let tol = T::from_usize_lossy(n.max(1)) * T::epsilon() * T::lit(16.0) * max_diag;
    let mut l = Matrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let (piv, &dmax) = (k..n)
            .map(|i| (i, &a[(i, i)]))
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap_or(std::cmp::Ordering::Equal))
            .expect("nonempty range");
        if dmax <= tol {
            break;
        }
        if piv != k {
            for j in 0..n {
                let t = a[(k, j)];
                a[(k, j)] = a[(piv, j)];
                a[(piv, j)] = t;
            }
            for i in 0..n {
                let t = a[(i, k)];
                a[(i, k)] = a[(i, piv)];
                a[(i, piv)] = t;
            }
            for j in 0..k {
                let t = l[(k, j)];
                l[(k, j)] = l[(piv, j)];
                l[(piv, j)] = t;
            }
            perm.swap(k, piv);
        }
        let d = a[(k, k)].sqrt();
        l[(k, k)] = d;
        for i in k + 1..n {
            l[(i, k)] = a[(i, k)] / d;
        }
        for i in k + 1..n {
            for j in k + 1..=i {
                let upd = l[(i, k)] * l[(j, k)];
                a[(i, j)] -= upd;
                if i != j {
                    a[(j, i)] -= upd;
                }
            }
        }
        rank += 1;
    }
    // Permuted P = L Lᵀ, so P = Πᵀ L Lᵀ Π and the root is (Π L)ᵀ restricted to rank columns.
    let mut root = Matrix::zeros(rank, n);
    for r in 0..rank {
        for (row_in_perm, &orig) in perm.iter().enumerate() {
            root[(r, orig)] = l[(row_in_perm, r)];
        }
    }
    Ok(root)
}

fn max_abs<T: Real>(m: &Matrix<T>) -> T {
    m.as_slice().iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Matrix<f64> {
        Matrix::from_rows(&[
            vec![2.0, -1.0, 0.5],
            vec![1.0, 3.0, -2.0],
            vec![0.0, 1.0, 4.0],
            vec![1.5, 0.5, 1.0],
            vec![-1.0, 2.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn qr_least_squares_matches_normal_equations() {
        let a = sample();
        let b = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let qr = Qr::new(&a).unwrap();
        let x = qr.solve_least_squares(&b).unwrap();
        let chol = Cholesky::new(&a.gram()).unwrap();
        let x2 = chol.solve(&a.tr_matvec(&b));
        for (u, v) in x.iter().zip(&x2) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn qr_r_reproduces_gram() {
        let a = sample();
        let qr = Qr::new(&a).unwrap();
        let rtr = qr.r().transpose().matmul(qr.r()).unwrap();
        let g = a.gram();
        for i in 0..3 {
            for j in 0..3 {
                assert!((rtr[(i, j)] - g[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]]).unwrap();
        let qr = Qr::new(&a).unwrap();
        let err = qr.check_rank(1e-10).unwrap_err();
        assert!(err.to_string().contains("condition"));
    }

    #[test]
    fn psd_root_recovers_second_difference_penalty() {
        let mut d = Matrix::<f64>::zeros(4, 6);
        for i in 0..4 {
            d[(i, i)] = 1.0;
            d[(i, i + 1)] = -2.0;
            d[(i, i + 2)] = 1.0;
        }
        let p = d.gram();
        let root = psd_root(&p).unwrap();
        assert_eq!(root.nrows(), 4);
        let back = root.gram();
        for i in 0..6 {
            for j in 0..6 {
                assert!((back[(i, j)] - p[(i, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let a = Matrix::<f32>::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let x = Cholesky::new(&a).unwrap().solve(&[1.0, 2.0]);
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-5);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-5);
    }
}
