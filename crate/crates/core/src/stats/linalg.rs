//! Small dense linear algebra for regression fits with a handful of columns.

use std::ops::{Index, IndexMut};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows * cols");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|r| super::compensated_sum(self.row(r).iter().zip(v).map(|(a, b)| a * b)))
            .collect()
    }

    /// Xᵀ diag(w) X, with `w = None` meaning unit weights.
    pub fn weighted_gram(&self, weights: Option<&[f64]>) -> Matrix {
        let p = self.cols;
        let mut out = Matrix::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let s = super::compensated_sum((0..self.rows).map(|r| {
                    let w = weights.map_or(1.0, |w| w[r]);
                    w * self[(r, i)] * self[(r, j)]
                }));
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }

    /// Xᵀ v.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        (0..self.cols)
            .map(|c| super::compensated_sum((0..self.rows).map(|r| self[(r, c)] * v[r])))
            .collect()
    }

    /// Lower-triangular Cholesky factor of a symmetric positive definite
    /// matrix. Returns `None` when a pivot falls below `rel_tol` times the
    /// corresponding diagonal entry.
    pub fn cholesky(&self, rel_tol: f64) -> Option<Matrix> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > rel_tol * self[(j, j)].abs()) || !d.is_finite() {
                return None;
            }
            let ljj = d.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Some(l)
    }

    /// Solves L Lᵀ x = b given the Cholesky factor L (self).
    pub fn cholesky_solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.rows;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self[(i, k)] * y[k];
            }
            y[i] = s / self[(i, i)];
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self[(k, i)] * x[k];
            }
            x[i] = s / self[(i, i)];
        }
        x
    }

    /// Inverse of the SPD matrix whose Cholesky factor is `self`.
    pub fn cholesky_inverse(&self) -> Matrix {
        let n = self.rows;
        let mut inv = Matrix::zeros(n, n);
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = self.cholesky_solve(&e);
            for r in 0..n {
                inv[(r, c)] = col[r];
            }
        }
        inv
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Householder QR factorization of a tall matrix.
#[derive(Debug, Clone)]
pub struct Qr {
    // Householder vectors below the diagonal, R on and above it.
    packed: Matrix,
    r_diag: Vec<f64>,
}

impl Qr {
    pub fn new(a: &Matrix) -> Self {
        let (m, n) = (a.rows(), a.cols());
        let mut qr = a.clone();
        let mut r_diag = vec![0.0; n];
        for k in 0..n {
            let mut norm = 0.0f64;
            for i in k..m {
                norm = norm.hypot(qr[(i, k)]);
            }
            if norm != 0.0 {
                if qr[(k, k)] < 0.0 {
                    norm = -norm;
                }
                for i in k..m {
                    qr[(i, k)] /= norm;
                }
                qr[(k, k)] += 1.0;
                for j in k + 1..n {
                    let mut s = 0.0;
                    for i in k..m {
                        s += qr[(i, k)] * qr[(i, j)];
                    }
                    s = -s / qr[(k, k)];
                    for i in k..m {
                        let v = qr[(i, k)];
                        qr[(i, j)] += s * v;
                    }
                }
            }
            r_diag[k] = -norm;
        }
        Self { packed: qr, r_diag }
    }

    /// Full column rank test: every |R_kk| exceeds `rel_tol` times the
    /// Euclidean norm of the corresponding input column.
    pub fn is_full_rank(&self, a: &Matrix, rel_tol: f64) -> bool {
        (0..a.cols()).all(|k| {
            let col_norm = a.column(k).iter().fold(0.0f64, |acc, v| acc.hypot(*v));
            col_norm > 0.0 && self.r_diag[k].abs() > rel_tol * col_norm
        })
    }

    /// Least-squares solution of A x ≈ b.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (m, n) = (self.packed.rows(), self.packed.cols());
        let mut y = b.to_vec();
        for k in 0..n {
            let mut s = 0.0;
            for i in k..m {
                s += self.packed[(i, k)] * y[i];
            }
            s = -s / self.packed[(k, k)];
            for i in k..m {
                y[i] += s * self.packed[(i, k)];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..n {
                s -= self.r(k, j) * x[j];
            }
            x[k] = s / self.r_diag[k];
        }
        x
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        if i == j {
            self.r_diag[i]
        } else {
            self.packed[(i, j)]
        }
    }

    /// (AᵀA)⁻¹ = R⁻¹ R⁻ᵀ.
    pub fn gram_inverse(&self) -> Matrix {
        let n = self.packed.cols();
        let mut r_inv = Matrix::zeros(n, n);
        for c in 0..n {
            for i in (0..=c).rev() {
                let mut s = if i == c { 1.0 } else { 0.0 };
                for j in i + 1..=c {
                    s -= self.r(i, j) * r_inv[(j, c)];
                }
                r_inv[(i, c)] = s / self.r_diag[i];
            }
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in i.max(j)..n {
                    s += r_inv[(i, k)] * r_inv[(j, k)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }
}
