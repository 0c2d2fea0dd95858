//! Small dense linear-algebra helpers.
//!
//! The KKT systems handled here are at most a few hundred rows, so everything is
//! dense and factorized with LU and partial pivoting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a matrix is declared singular.
pub const PIVOT_TOL: f64 = 1e-10;

/// LU factorization with partial pivoting, stored row-major.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    /// Factorizes `a`; fails with `SingularKkt` when a pivot falls below
    /// `PIVOT_TOL` times the largest absolute entry of `a`.
    pub fn factor(a: &DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU needs a square matrix");
        let mut lu = vec![0.0; n * n];
        let mut scale = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let v = a[(i, j)];
                lu[i * n + j] = v;
                scale = scale.max(v.abs());
            }
        }
        let tol = PIVOT_TOL * scale.max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best <= tol {
                return Err(Error::SingularKkt { pivot: best });
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            let pivot = lu[k * n + k];
            let (top, bottom) = lu.split_at_mut((k + 1) * n);
            let row_k = &top[k * n..(k + 1) * n];
            for i in 0..(n - k - 1) {
                let row_i = &mut bottom[i * n..(i + 1) * n];
                let f = row_i[k] / pivot;
                row_i[k] = f;
                if f != 0.0 {
                    for j in (k + 1)..n {
                        row_i[j] -= f * row_k[j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(l, v)| l * v).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let s: f64 = row[i + 1..]
                .iter()
                .zip(&x[i + 1..])
                .map(|(u, v)| u * v)
                .sum();
            x[i] = (x[i] - s) / row[i];
        }
        x
    }
}

/// Solves `a x = b`, returning `RankDeficient` when `a` is numerically singular.
pub fn solve_square(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = Lu::factor(a).map_err(|_| Error::RankDeficient)?;
    Ok(DVector::from_vec(lu.solve(b.as_slice())))
}

/// Inverse of a square matrix, or `RankDeficient`.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let lu = Lu::factor(a).map_err(|_| Error::RankDeficient)?;
    let mut inv = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = lu.solve(&e);
        for i in 0..n {
            inv[(i, j)] = col[i];
        }
    }
    Ok(inv)
}

/// Columns `cols` of `x`, in the given order.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// Rows `rows` of `x`, in the given order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Numerical rank of `a` by Gaussian elimination with complete pivoting.
pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let mut m = a.clone();
    let (rows, cols) = m.shape();
    let scale = m.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let tol = rel_tol * scale;
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (mut piv, mut best) = (r, m[(r, c)].abs());
        for i in (r + 1)..rows {
            if m[(i, c)].abs() > best {
                best = m[(i, c)].abs();
                piv = i;
            }
        }
        if best <= tol {
            continue;
        }
        m.swap_rows(r, piv);
        for i in (r + 1)..rows {
            let f = m[(i, c)] / m[(r, c)];
            if f != 0.0 {
                for j in c..cols {
                    let v = m[(r, j)];
                    m[(i, j)] -= f * v;
                }
            }
        }
        r += 1;
    }
    r
}

/// `X_M (X_M^T X_M)^{-1} e_pos`: the contrast whose inner product with `y` is the
/// `pos`-th least-squares coefficient of `y` on the columns of `xm`.
pub fn projection_contrast(xm: &DMatrix<f64>, pos: usize) -> Result<DVector<f64>> {
    let k = xm.ncols();
    if pos >= k {
        return Err(Error::IndexOutOfRange { index: pos, len: k });
    }
    let gram = xm.transpose() * xm;
    if rank(&gram, 1e-12) < k {
        return Err(Error::RankDeficient);
    }
    let mut e = DVector::zeros(k);
    e[pos] = 1.0;
    let w = solve_square(&gram, &e)?;
    Ok(xm * w)
}
