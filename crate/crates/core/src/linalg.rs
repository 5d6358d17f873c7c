//! Small dense complex linear algebra.
//!
//! Matrices are column-major; every routine here is sized for the tens-to-hundreds
//! of rows that appear in a base station array, not for large sparse systems.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CVector = Vec<Complex64>;

/// Column-major dense complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(rows: usize, columns: &[CVector]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for col in columns {
            if col.len() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: col.len(),
                });
            }
            data.extend_from_slice(col);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn col(&self, j: usize) -> &[Complex64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [Complex64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[Complex64]> + '_ {
        (0..self.cols).map(move |j| self.col(j))
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hstack(rows: usize, blocks: &[&CMatrix]) -> Result<Self> {
        let mut data = Vec::new();
        let mut cols = 0;
        for b in blocks {
            if b.rows != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    found: b.rows,
                });
            }
            data.extend_from_slice(&b.data);
            cols += b.cols;
        }
        Ok(Self { rows, cols, data })
    }

    /// `self * x`.
    pub fn mul_vec(&self, x: &[Complex64]) -> Result<CVector> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                found: x.len(),
            });
        }
        let mut y = vec![Complex64::new(0.0, 0.0); self.rows];
        for (j, &xj) in x.iter().enumerate() {
            axpy(xj, self.col(j), &mut y);
        }
        Ok(y)
    }

    /// `self^H * x`.
    pub fn adjoint_mul_vec(&self, x: &[Complex64]) -> Result<CVector> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: x.len(),
            });
        }
        Ok(self.columns().map(|c| dot(c, x)).collect())
    }

    /// `self^H * other`.
    pub fn adjoint_mul(&self, other: &CMatrix) -> Result<CMatrix> {
        if other.rows != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                found: other.rows,
            });
        }
        let mut out = CMatrix::zeros(self.cols, other.cols);
        for j in 0..other.cols {
            for i in 0..self.cols {
                out[(i, j)] = dot(self.col(i), other.col(j));
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[j * self.rows + i]
    }
}

/// Hermitian inner product `x^H y`.
pub fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .fold(Complex64::new(0.0, 0.0), |acc, (a, b)| acc + a.conj() * b)
}

/// Real inner product `Re(x^H y)` of the underlying real vectors.
pub fn real_dot(x: &[Complex64], y: &[Complex64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a.re * b.re + a.im * b.im).sum()
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm(x: &[Complex64]) -> f64 {
    norm_sqr(x).sqrt()
}

/// y += a * x
pub fn axpy(a: Complex64, x: &[Complex64], y: &mut [Complex64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn scale(a: f64, x: &[Complex64]) -> CVector {
    x.iter().map(|z| z * a).collect()
}

/// Householder QR of a tall matrix `a` (m×n, m ≥ n), kept in factored form.
///
/// Reflector k is `H_k = I - 2 v_k v_k^H` acting on rows `k..m`, with `‖v_k‖ = 1`.
/// `Q = H_0 H_1 … H_{n-1}` and `R` is upper triangular with diagonal `r_diag`.
#[derive(Clone, Debug)]
pub struct HouseholderQr {
    m: usize,
    reflectors: Vec<CVector>,
    r_diag: Vec<Complex64>,
}

impl HouseholderQr {
    pub fn new(a: &CMatrix) -> Self {
        let (m, n) = (a.rows(), a.cols());
        assert!(m >= n, "Householder QR needs a tall matrix");
        let mut work = a.clone();
        let mut reflectors = Vec::with_capacity(n);
        let mut r_diag = Vec::with_capacity(n);
        for k in 0..n {
            let x = &work.col(k)[k..];
            let xnorm = norm(x);
            let x0 = x[0];
            // alpha = -e^{i arg(x0)} ‖x‖ avoids cancellation in v = x - alpha e_1
            let phase = if x0.norm() > 0.0 {
                x0 / x0.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            let alpha = -phase * xnorm;
            let mut v: CVector = x.to_vec();
            v[0] -= alpha;
            let vnorm = norm(&v);
            if vnorm > 0.0 {
                for vi in v.iter_mut() {
                    *vi /= vnorm;
                }
            }
            // apply H to the remaining columns
            for j in k..n {
                let col = &mut work.col_mut(j)[k..];
                let s = dot(&v, col) * 2.0;
                axpy(-s, &v, col);
            }
            r_diag.push(if xnorm > 0.0 { alpha } else { x0 });
            reflectors.push(v);
        }
        Self {
            m,
            reflectors,
            r_diag,
        }
    }

    pub fn r_diag(&self) -> &[Complex64] {
        &self.r_diag
    }

    /// Overwrites `x` with `Q x`.
    pub fn apply_q(&self, x: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.m);
        for (k, v) in self.reflectors.iter().enumerate().rev() {
            let tail = &mut x[k..];
            let s = dot(v, tail) * 2.0;
            axpy(-s, v, tail);
        }
    }

    /// Overwrites `x` with `Q^H x`.
    pub fn apply_q_adjoint(&self, x: &mut [Complex64]) {
        debug_assert_eq!(x.len(), self.m);
        for (k, v) in self.reflectors.iter().enumerate() {
            let tail = &mut x[k..];
            let s = dot(v, tail) * 2.0;
            axpy(-s, v, tail);
        }
    }

    /// The trailing `m - n` columns of the full `Q`, an orthonormal basis for the
    /// orthogonal complement of the column space.
    pub fn null_space_basis(&self) -> CMatrix {
        let n = self.reflectors.len();
        let mut basis = CMatrix::zeros(self.m, self.m - n);
        for j in 0..self.m - n {
            let col = basis.col_mut(j);
            col[n + j] = Complex64::new(1.0, 0.0);
            self.apply_q(col);
        }
        basis
    }
}

/// Cholesky solve of a small symmetric positive definite real system stored row-major.
///
/// Returns `None` when a pivot falls below `pivot_tol` times the largest diagonal entry.
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64], pivot_tol: f64) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let max_diag = (0..n).map(|i| a[i * n + i]).fold(0.0, f64::max);
    if n > 0 && !(max_diag > 0.0) {
        return None;
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= pivot_tol * max_diag {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i * n + k] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k * n + i] * y[k];
        }
        y[i] /= l[i * n + i];
    }
    Some(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn householder_reconstructs_input() {
        let a = CMatrix::from_columns(
            3,
            &[
                vec![c(1.0, 2.0), c(0.5, -1.0), c(-3.0, 0.0)],
                vec![c(0.0, 1.0), c(2.0, 2.0), c(1.0, -1.0)],
            ],
        )
        .unwrap();
        let qr = HouseholderQr::new(&a);
        // Q^H a must be upper triangular
        for j in 0..2 {
            let mut col = a.col(j).to_vec();
            qr.apply_q_adjoint(&mut col);
            for (i, v) in col.iter().enumerate() {
                if i > j {
                    assert!(v.norm() < 1e-12, "below-diagonal entry {v}");
                }
                if i == j {
                    assert!((v - qr.r_diag()[j]).norm() < 1e-12);
                }
            }
        }
        let basis = qr.null_space_basis();
        assert_eq!(basis.cols(), 1);
        let leak = a.adjoint_mul(&basis).unwrap();
        assert!(leak.max_abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_and_rejects_singular() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, 2, &[2.0, 1.0], 1e-14).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        assert!(cholesky_solve(&[1.0, 1.0, 1.0, 1.0], 2, &[1.0, 1.0], 1e-12).is_none());
    }
}
