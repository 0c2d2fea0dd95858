//! KKT block systems restricted to a working set.
//!
//! Working rows with a single nonzero fix their variable outright, so the system that
//! is actually factored only covers the remaining free variables and the general rows:
//!
//! ```text
//! [ P_FF   A_RFᵀ ] [ r_F ]   [ -q_F - P_FX r_X ]
//! [ A_RF   0     ] [ u_R ] = [  h_R - A_RX r_X ]
//! ```
//!
//! Multipliers of the bound rows are then read off the stationarity condition.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector, SVD};

use super::{ParametricQP, RowShape};
use crate::error::Result;
use crate::linalg::Lu;

const NULL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy)]
struct Fixed {
    col: usize,
    coef: f64,
    slot: usize,
}

pub(crate) struct ReducedKkt<'a> {
    qp: &'a ParametricQP,
    working: Vec<usize>,
    fixed: Vec<Fixed>,
    is_fixed: Vec<bool>,
    general: Vec<usize>,
    free: Vec<usize>,
    matrix: DMatrix<f64>,
    lu: Result<Lu>,
    svd: OnceCell<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl<'a> ReducedKkt<'a> {
    /// `working` must hold distinct, non-empty constraint rows.
    pub(crate) fn new(qp: &'a ParametricQP, working: &[usize]) -> Self {
        let d = qp.dim();
        let mut is_fixed = vec![false; d];
        let mut fixed = Vec::new();
        let mut general = Vec::new();
        for (slot, &row) in working.iter().enumerate() {
            match &qp.rows()[row] {
                RowShape::Bound { col, coef } if !is_fixed[*col] => {
                    is_fixed[*col] = true;
                    fixed.push(Fixed {
                        col: *col,
                        coef: *coef,
                        slot,
                    });
                }
                _ => general.push(slot),
            }
        }
        let free: Vec<usize> = (0..d).filter(|&k| !is_fixed[k]).collect();
        let mut pos = vec![usize::MAX; d];
        for (i, &k) in free.iter().enumerate() {
            pos[k] = i;
        }
        let nf = free.len();
        let size = nf + general.len();
        let mut matrix = DMatrix::zeros(size, size);
        let p = qp.p();
        for (i, &ki) in free.iter().enumerate() {
            for (j, &kj) in free.iter().enumerate() {
                matrix[(i, j)] = p[(ki, kj)];
            }
        }
        for (a, &slot) in general.iter().enumerate() {
            let row = working[slot];
            for_each_entry(&qp.rows()[row], |col, v| {
                if pos[col] != usize::MAX {
                    matrix[(nf + a, pos[col])] = v;
                    matrix[(pos[col], nf + a)] = v;
                }
            });
        }
        let lu = Lu::factor(&matrix);
        Self {
            qp,
            working: working.to_vec(),
            fixed,
            is_fixed,
            general,
            free,
            matrix,
            lu,
            svd: OnceCell::new(),
        }
    }

    pub(crate) fn is_singular(&self) -> bool {
        self.lu.is_err()
    }

    /// Solves for the point with linear term `q` and right-hand side `h` (both full
    /// length). Multipliers are returned in working-set order.
    pub(crate) fn solve(
        &self,
        q: &DVector<f64>,
        h: &DVector<f64>,
    ) -> Result<(DVector<f64>, Vec<f64>)> {
        let lu = self.lu.as_ref().map_err(Clone::clone)?;
        Ok(self.solve_with(q, h, |rhs| lu.solve(rhs)))
    }

    /// Minimum-norm least-squares solution, used when the block matrix is singular.
    pub(crate) fn solve_min_norm(
        &self,
        q: &DVector<f64>,
        h: &DVector<f64>,
    ) -> (DVector<f64>, Vec<f64>) {
        let (svd, eps) = self.svd();
        self.solve_with(q, h, |rhs| {
            let b = DVector::from_column_slice(rhs);
            match svd.solve(&b, eps) {
                Ok(x) => x.as_slice().to_vec(),
                Err(_) => vec![0.0; rhs.len()],
            }
        })
    }

    /// Whether row `i` is, up to round-off, a combination of the working rows. Such a
    /// row is parallel to every step that keeps the working rows active.
    pub(crate) fn depends(&self, i: usize) -> bool {
        let nf = self.free.len();
        let mut rhs = vec![0.0; self.matrix.nrows()];
        for_each_entry(&self.qp.rows()[i], |col, v| {
            if let Ok(k) = self.free.binary_search(&col) {
                rhs[k] = v;
            }
        });
        let norm = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if norm == 0.0 {
            return true;
        }
        // Solving K [x; w] = [a_F; 0] gives x = 0 exactly when a_F is a combination of
        // the general working rows.
        let x = match &self.lu {
            Ok(lu) => lu.solve(&rhs),
            Err(_) => {
                let (svd, eps) = self.svd();
                let b = DVector::from_column_slice(&rhs);
                let Ok(sol) = svd.solve(&b, eps) else {
                    return false;
                };
                if (&self.matrix * &sol - b).amax() > 1e-8 * norm {
                    return false;
                }
                sol.as_slice().to_vec()
            }
        };
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        x[..nf].iter().all(|v| v.abs() * scale <= 1e-8 * norm)
    }

    fn svd(&self) -> (&SVD<f64, nalgebra::Dyn, nalgebra::Dyn>, f64) {
        let svd = self.svd.get_or_init(|| self.matrix.clone().svd(true, true));
        let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
        (svd, NULL_TOL * smax.max(f64::MIN_POSITIVE))
    }

    /// A direction `d` with `P d = 0`, `A_W d = 0` and `gradᵀ d < 0`, if the working set
    /// leaves such a zero-curvature descent direction.
    pub(crate) fn null_descent(&self, grad: &DVector<f64>) -> Option<DVector<f64>> {
        let nf = self.free.len();
        if nf == 0 {
            return None;
        }
        let (svd, eps) = self.svd();
        let v_t = svd.v_t.as_ref()?;
        let g_f: Vec<f64> = self.free.iter().map(|&k| grad[k]).collect();
        let mut d_f = vec![0.0; nf];
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s > eps {
                continue;
            }
            let v: Vec<f64> = (0..nf).map(|i| v_t[(k, i)]).collect();
            let coef: f64 = v.iter().zip(&g_f).map(|(a, b)| a * b).sum();
            for i in 0..nf {
                d_f[i] -= coef * v[i];
            }
        }
        let mut d = DVector::zeros(self.qp.dim());
        for (i, &k) in self.free.iter().enumerate() {
            d[k] = d_f[i];
        }
        let slope = grad.dot(&d);
        let scale = grad.amax().max(1.0) * d.amax();
        if d.amax() == 0.0 || slope >= -1e-10 * scale {
            return None;
        }
        let pd = self.qp.p() * &d;
        if pd.amax() > 1e-8 * self.qp.p().amax().max(1.0) * d.amax() {
            return None;
        }
        Some(d)
    }

    fn solve_with(
        &self,
        q: &DVector<f64>,
        h: &DVector<f64>,
        solve: impl Fn(&[f64]) -> Vec<f64>,
    ) -> (DVector<f64>, Vec<f64>) {
        let qp = self.qp;
        let d = qp.dim();
        let nf = self.free.len();
        let mut r = DVector::zeros(d);
        for f in &self.fixed {
            r[f.col] = h[self.working[f.slot]] / f.coef;
        }
        let p = qp.p();
        let mut rhs = vec![0.0; nf + self.general.len()];
        for (i, &k) in self.free.iter().enumerate() {
            let mut s = q[k];
            for f in &self.fixed {
                s += p[(k, f.col)] * r[f.col];
            }
            rhs[i] = -s;
        }
        for (a, &slot) in self.general.iter().enumerate() {
            let row = self.working[slot];
            let mut s = h[row];
            for_each_entry(&qp.rows()[row], |col, v| {
                if self.is_fixed[col] {
                    s -= v * r[col];
                }
            });
            rhs[nf + a] = s;
        }
        let x = solve(&rhs);
        for (i, &k) in self.free.iter().enumerate() {
            r[k] = x[i];
        }
        let mut u = vec![0.0; self.working.len()];
        let mut grad = p * &r + q;
        for (a, &slot) in self.general.iter().enumerate() {
            let ua = x[nf + a];
            u[slot] = ua;
            for_each_entry(&qp.rows()[self.working[slot]], |col, v| grad[col] += v * ua);
        }
        for f in &self.fixed {
            u[f.slot] = -grad[f.col] / f.coef;
        }
        (r, u)
    }
}

fn for_each_entry(row: &RowShape, mut f: impl FnMut(usize, f64)) {
    match row {
        RowShape::Empty => {}
        RowShape::Bound { col, coef } => f(*col, *coef),
        RowShape::General { entries } => entries.iter().for_each(|&(c, v)| f(c, v)),
    }
}
