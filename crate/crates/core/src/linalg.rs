//! Small dense matrices (n ≲ 10) and the symmetric factorizations the
//! covariance code needs.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Real;

/// Condition number above which a covariance is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("singular covariance (condition number {condition:e})")]
    Singular { condition: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Row-major dense matrix.
#[derive(Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from row slices. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.concat() }
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<T>], rows: usize) -> Self {
        Self::from_fn(rows, cols.len(), |i, j| cols[j][i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matrix product dimension mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "matrix-vector dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ v`
    pub fn tr_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.rows, v.len(), "matrix-vector dimension mismatch");
        let mut out = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self[(i, j)] * v[i];
            }
        }
        out
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        let data = self.data.iter().zip(&rhs.data).map(|(&a, &b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| a * s).collect() }
    }

    pub fn add_assign_scaled(&mut self, rhs: &Self, s: T) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += s * b;
        }
    }

    /// `self += s · u wᵀ`
    pub fn add_outer(&mut self, u: &[T], w: &[T], s: T) {
        for i in 0..self.rows {
            for j in 0..self.cols {
                self.data[i * self.cols + j] += s * u[i] * w[j];
            }
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &a| m.max(a.abs()))
    }

    /// Largest entry of `|self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.sub(other).max_abs()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.rows {
            for j in 0..i {
                m = m.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        m
    }

    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| (self[(i, j)] + self[(j, i)]) * T::lit(0.5))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&a| f(a)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Lower Cholesky factor; `None` if a pivot is not strictly positive.
    pub fn cholesky(&self) -> Option<Self> {
        assert!(self.is_square());
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(l)
    }

    /// Solve `self x = b` for symmetric positive definite `self`.
    pub fn solve_spd(&self, b: &[T]) -> Option<Vec<T>> {
        self.cholesky().map(|l| Self::cholesky_solve(&l, b))
    }

    /// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        assert!(self.is_square());
        let n = self.rows;
        let mut a = self.symmetrized();
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut off = T::zero();
            let mut diag = T::zero();
            for i in 0..n {
                diag += a[(i, i)] * a[(i, i)];
                for j in 0..n {
                    if i != j {
                        off += a[(i, j)] * a[(i, j)];
                    }
                }
            }
            if off <= eps * eps * diag || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (T::one() + theta * theta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..n).map(|i| a[(i, i)]).collect();
        ev.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
        ev
    }

    /// Singular values (one-sided Jacobi), descending.
    pub fn singular_values(&self) -> Vec<T> {
        let mut b = if self.cols <= self.rows { self.clone() } else { self.transpose() };
        let (m, k) = (b.rows, b.cols);
        let eps = T::epsilon();
        for _sweep in 0..100 {
            let mut rotated = false;
            for i in 0..k {
                for j in i + 1..k {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for r in 0..m {
                        let bi = b[(r, i)];
                        let bj = b[(r, j)];
                        alpha += bi * bi;
                        beta += bj * bj;
                        gamma += bi * bj;
                    }
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for r in 0..m {
                        let bi = b[(r, i)];
                        let bj = b[(r, j)];
                        b[(r, i)] = c * bi - s * bj;
                        b[(r, j)] = s * bi + c * bj;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<T> =
            (0..k).map(|j| (0..m).map(|r| b[(r, j)] * b[(r, j)]).sum::<T>().sqrt()).collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap_or(std::cmp::Ordering::Equal));
        sv
    }

    /// Numerical rank with the scale-free threshold `σ > rel_tol · σ_max`.
    pub fn rank(&self, rel_tol: T) -> usize {
        let sv = self.singular_values();
        let Some(&top) = sv.first() else { return 0 };
        if top == T::zero() {
            return 0;
        }
        sv.iter().filter(|&&s| s > rel_tol * top).count()
    }

    /// Solve `self x = b` given the lower Cholesky factor `l` of `self`.
    fn cholesky_solve(l: &Self, b: &[T]) -> Vec<T> {
        let n = l.rows;
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
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

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut l = f.debug_list();
        for i in 0..self.rows {
            l.entry(&&self.data[i * self.cols..(i + 1) * self.cols]);
        }
        l.finish()
    }
}

/// Inverse of a symmetric positive definite matrix with spectral diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct SpdInverse<T> {
    pub inverse: Matrix<T>,
    pub min_eigenvalue: T,
    pub max_eigenvalue: T,
    pub determinant: T,
    pub condition: T,
}

/// Invert a symmetric PSD matrix via its Cholesky factor.
///
/// Rejects matrices whose smallest eigenvalue is below `-1e-10 · λ_max`
/// (not PSD) or whose condition number exceeds [`MAX_CONDITION`].
pub fn invert_spd<T: Real>(c: &Matrix<T>) -> Result<SpdInverse<T>, LinalgError> {
    if !c.is_square() {
        return Err(LinalgError::Dimension(format!("{}x{} is not square", c.rows, c.cols)));
    }
    let n = c.rows;
    let scale = c.max_abs().max(T::min_positive_value());
    let asym = c.max_asymmetry();
    if asym > T::lit(1e-8) * scale {
        return Err(LinalgError::NotSymmetric { asymmetry: asym.to_f64_lossy() });
    }
    let sym = c.symmetrized();
    let ev = sym.symmetric_eigenvalues();
    let (lmin, lmax) = (ev[0], ev[n - 1]);
    if !(lmax > T::zero()) {
        return Err(LinalgError::Singular { condition: f64::INFINITY });
    }
    if lmin < -T::lit(1e-10) * lmax {
        return Err(LinalgError::NotPsd { min_eigenvalue: lmin.to_f64_lossy() });
    }
    let condition = if lmin > T::zero() { lmax / lmin } else { T::infinity() };
    if !(condition <= T::lit(MAX_CONDITION)) {
        return Err(LinalgError::Singular { condition: condition.to_f64_lossy() });
    }
    let l = sym
        .cholesky()
        .ok_or(LinalgError::Singular { condition: condition.to_f64_lossy() })?;
    let mut inv = Matrix::zeros(n, n);
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|x| *x = T::zero());
        e[j] = T::one();
        let col = Matrix::cholesky_solve(&l, &e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    let inverse = inv.symmetrized();
    let determinant = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(T::one(), |a, b| a * b);
    Ok(SpdInverse { inverse, min_eigenvalue: lmin, max_eigenvalue: lmax, determinant, condition })
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_inverts_to_identity() {
        let inv = invert_spd(&Matrix::<f64>::identity(3)).unwrap();
        assert!(inv.inverse.max_abs_diff(&Matrix::identity(3)) < 1e-15);
        assert!((inv.determinant - 1.0).abs() < 1e-15);
        assert!((inv.condition - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asian_covariance_inverse() {
        let c = Matrix::from_rows(&[vec![1.0f64, -0.5], vec![-0.5, 1.0 / 3.0]]);
        let inv = invert_spd(&c).unwrap();
        let expected = Matrix::from_rows(&[vec![4.0, 6.0], vec![6.0, 12.0]]);
        assert!(inv.inverse.max_abs_diff(&expected) < 1e-10);
        assert!((inv.determinant - 1.0 / 12.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(invert_spd(&c), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn indefinite_is_rejected() {
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, -1.0]]);
        assert!(matches!(invert_spd(&c), Err(LinalgError::NotPsd { .. })));
    }

    #[test]
    fn asymmetric_is_rejected() {
        let c = Matrix::from_rows(&[vec![1.0, 0.3], vec![0.0, 1.0]]);
        assert!(matches!(invert_spd(&c), Err(LinalgError::NotSymmetric { .. })));
    }

    #[test]
    fn ill_conditioned_is_singular() {
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1e-13]]);
        assert!(matches!(invert_spd(&c), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn jacobi_eigenvalues_of_known_matrix() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let m = Matrix::from_rows(&[vec![2.0f64, 1.0], vec![1.0, 2.0]]);
        let ev = m.symmetric_eigenvalues();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_values_match_eigen_route() {
        let a = Matrix::from_rows(&[vec![1.0f64, 2.0, 0.5], vec![-1.0, 0.3, 4.0]]);
        let sv = a.singular_values();
        let gram = a.mul(&a.transpose());
        let ev = gram.symmetric_eigenvalues();
        assert_eq!(sv.len(), 2);
        assert!((sv[0] * sv[0] - ev[1]).abs() < 1e-10);
        assert!((sv[1] * sv[1] - ev[0]).abs() < 1e-10);
    }

    #[test]
    fn rank_uses_relative_threshold() {
        // ratio 1e-8 is above the threshold, 1e-10 is below
        let a = Matrix::from_rows(&[vec![1e6, 0.0], vec![0.0, 1e-2]]);
        assert_eq!(a.rank(1e-9), 2);
        let b = Matrix::from_rows(&[vec![1e6, 0.0], vec![0.0, 1e-4]]);
        assert_eq!(b.rank(1e-9), 1);
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1e-12]]);
        assert_eq!(c.rank(1e-9), 1);
    }
}
