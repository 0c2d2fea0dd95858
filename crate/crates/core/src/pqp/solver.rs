//! Fixed-`z` solves: a primal active-set method over [`ReducedKkt`] systems.

use nalgebra::DVector;

use super::kkt::ReducedKkt;
use super::{ParametricQP, RowShape, ACTIVE_TOL};
use crate::error::{Error, Result};

const STEP_TOL: f64 = 1e-12;
const DUAL_TOL: f64 = 1e-10;
const BLOCK_TOL: f64 = 1e-13;
const FEAS_TOL: f64 = 1e-9;

/// Optimal primal/dual pair of the QP at one `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualPoint {
    pub z: f64,
    pub r: DVector<f64>,
    pub u: DVector<f64>,
    /// Sorted rows with `u_i > 1e-9`.
    pub active: Vec<usize>,
}

/// Infinity-norm KKT residuals of a [`PrimalDualPoint`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
    pub min_dual: f64,
}

impl KktResiduals {
    pub fn within(&self, tol: f64) -> bool {
        self.stationarity <= tol
            && self.primal <= tol
            && self.complementarity <= tol
            && self.min_dual >= -tol.min(1e-9)
    }
}

impl PrimalDualPoint {
    pub fn kkt_residuals(&self, qp: &ParametricQP) -> KktResiduals {
        let grad = qp.p() * &self.r + qp.q_at(self.z) + qp.g().transpose() * &self.u;
        let mut primal = 0.0f64;
        let mut comp = 0.0f64;
        for i in 0..qp.n_constraints() {
            let slack = qp.row_dot(i, &self.r) - qp.h0()[i] - qp.h1()[i] * self.z;
            primal = primal.max(slack);
            comp = comp.max((self.u[i] * slack).abs());
        }
        KktResiduals {
            stationarity: grad.amax(),
            primal,
            complementarity: comp,
            min_dual: self.u.iter().copied().fold(0.0, f64::min),
        }
    }
}

/// Solves the QP at `z` from scratch.
pub fn solve_qp_at(qp: &ParametricQP, z: f64) -> Result<PrimalDualPoint> {
    let q = qp.q_at(z);
    let h = qp.h_at(z);
    let start = start_point(qp, z, &q, &h)?;
    let (r, working, u_w) = active_set(qp, z, &q, &h, start)?;
    Ok(point(qp, z, r, &working, &u_w))
}

/// Tries the working set `guess` with a single block solve and keeps the result if it
/// is primal and dual feasible; otherwise falls back to [`solve_qp_at`].
pub fn solve_qp_from(qp: &ParametricQP, z: f64, guess: &[usize]) -> Result<PrimalDualPoint> {
    let q = qp.q_at(z);
    let h = qp.h_at(z);
    let mut working: Vec<usize> = guess
        .iter()
        .copied()
        .filter(|&i| i < qp.n_constraints() && qp.rows()[i] != RowShape::Empty)
        .collect();
    working.sort_unstable();
    working.dedup();
    let kkt = ReducedKkt::new(qp, &working);
    if let Ok((r, u_w)) = kkt.solve(&q, &h) {
        let tol = FEAS_TOL * (1.0 + h.amax() + r.amax());
        if u_w.iter().all(|&u| u >= -DUAL_TOL) && qp.max_violation(&r, z) <= tol {
            return Ok(point(qp, z, r, &working, &u_w));
        }
    }
    solve_qp_at(qp, z)
}

fn point(
    qp: &ParametricQP,
    z: f64,
    r: DVector<f64>,
    working: &[usize],
    u_w: &[f64],
) -> PrimalDualPoint {
    let mut u = DVector::zeros(qp.n_constraints());
    let mut active = Vec::new();
    for (&i, &ui) in working.iter().zip(u_w) {
        u[i] = ui;
        if ui > ACTIVE_TOL {
            active.push(i);
        }
    }
    active.sort_unstable();
    PrimalDualPoint { z, r, u, active }
}

fn start_point(
    qp: &ParametricQP,
    z: f64,
    q: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<DVector<f64>> {
    let tol = FEAS_TOL * (1.0 + h.amax());
    if let Some(start) = qp.feasible_start() {
        let r = start(z);
        if r.len() == qp.dim() && qp.max_violation(&r, z) <= tol {
            return Ok(r);
        }
    }
    let zero = DVector::zeros(qp.dim());
    if qp.max_violation(&zero, z) <= tol {
        return Ok(zero);
    }
    phase_one(qp, z, q, h)
}

/// Finds a feasible point by penalizing a uniform relaxation `G r - t ≤ h`.
fn phase_one(
    qp: &ParametricQP,
    z: f64,
    q: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<DVector<f64>> {
    let d = qp.dim();
    let m = qp.n_constraints();
    let mut g = nalgebra::DMatrix::zeros(m, d + 1);
    g.view_mut((0, 0), (m, d)).copy_from(qp.g());
    g.column_mut(d).fill(-1.0);
    let t0 = h.iter().map(|v| -v).fold(0.0, f64::max) + 1.0;
    let scale = 1.0 + q.amax() + h.amax();
    let mut weight = 1e2 * scale;
    while weight <= 1e12 * scale {
        let mut q_aux = DVector::zeros(d + 1);
        q_aux[d] = weight;
        let aux = ParametricQP::new(
            nalgebra::DMatrix::identity(d + 1, d + 1),
            g.clone(),
            q_aux.clone(),
            DVector::zeros(d + 1),
            h.clone(),
            DVector::zeros(m),
        )?;
        let mut start = DVector::zeros(d + 1);
        start[d] = t0;
        let (r, _, _) = active_set(&aux, 0.0, &q_aux, h, start)?;
        if r[d] <= FEAS_TOL * (1.0 + h.amax()) {
            return Ok(r.rows(0, d).into_owned());
        }
        weight *= 1e2;
    }
    Err(Error::Infeasible { z })
}

/// Primal active-set iterations from the feasible point `r`.
fn active_set(
    qp: &ParametricQP,
    z: f64,
    q: &DVector<f64>,
    h: &DVector<f64>,
    mut r: DVector<f64>,
) -> Result<(DVector<f64>, Vec<usize>, Vec<f64>)> {
    let m = qp.n_constraints();
    let rows = qp.rows();
    let mut in_working = vec![false; m];
    let mut fixed_col = vec![false; qp.dim()];
    let mut working = Vec::new();
    let mut parallel = vec![false; m];
    for i in 0..m {
        if let RowShape::Bound { col, .. } = rows[i] {
            if !fixed_col[col] && (qp.row_dot(i, &r) - h[i]).abs() <= FEAS_TOL * (1.0 + h[i].abs())
            {
                fixed_col[col] = true;
                in_working[i] = true;
                working.push(i);
            }
        }
    }
    seed_general_rows(qp, h, &r, &fixed_col, &mut in_working, &mut working);
    let max_iter = 50 * (qp.dim() + m) + 100;
    for _ in 0..max_iter {
        let kkt = ReducedKkt::new(qp, &working);
        let (target, u_w) = if kkt.is_singular() {
            let grad = qp.p() * &r + q;
            if let Some(dir) = kkt.null_descent(&grad) {
                let (alpha, block) = independent_block(
                    qp,
                    &kkt,
                    h,
                    &r,
                    &dir,
                    &in_working,
                    &mut parallel,
                    f64::INFINITY,
                );
                let Some(i) = block else {
                    return Err(Error::Unbounded { z });
                };
                r += dir * alpha;
                in_working[i] = true;
                working.push(i);
                continue;
            }
            kkt.solve_min_norm(q, h)
        } else {
            kkt.solve(q, h)?
        };
        let step = &target - &r;
        if step.amax() > STEP_TOL * (1.0 + r.amax()) {
            let (alpha, block) =
                independent_block(qp, &kkt, h, &r, &step, &in_working, &mut parallel, 1.0);
            if let Some(i) = block {
                r += step * alpha;
                in_working[i] = true;
                working.push(i);
                continue;
            }
        }
        r = target;
        let worst = u_w
            .iter()
            .enumerate()
            .filter(|(_, &u)| u < -DUAL_TOL)
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)));
        match worst {
            None => return Ok((r, working, u_w)),
            Some((slot, _)) => {
                parallel.fill(false);
                in_working[working[slot]] = false;
                working.remove(slot);
            }
        }
    }
    Err(Error::MaxIterations {
        iterations: max_iter,
    })
}

/// Adds the general rows that are tight at the start and independent on the free
/// columns, so a start near a vertex does not rediscover them one ratio test at a time.
fn seed_general_rows(
    qp: &ParametricQP,
    h: &DVector<f64>,
    r: &DVector<f64>,
    fixed_col: &[bool],
    in_working: &mut [bool],
    working: &mut Vec<usize>,
) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for (i, row) in qp.rows().iter().enumerate() {
        let RowShape::General { entries } = row else {
            continue;
        };
        if (qp.row_dot(i, r) - h[i]).abs() > FEAS_TOL * (1.0 + h[i].abs()) {
            continue;
        }
        let mut v = DVector::zeros(qp.dim());
        for &(c, a) in entries {
            if !fixed_col[c] {
                v[c] = a;
            }
        }
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        for b in &basis {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
        let rest = v.norm();
        if rest > 1e-6 * norm {
            basis.push(v / rest);
            in_working[i] = true;
            working.push(i);
        }
    }
}

/// Ratio test that passes over rows dependent on the working set. Those rows stay
/// satisfied along the step anyway, and adding one would make the KKT system singular.
/// `parallel` caches them until the working set next shrinks.
#[allow(clippy::too_many_arguments)]
fn independent_block(
    qp: &ParametricQP,
    kkt: &ReducedKkt,
    h: &DVector<f64>,
    r: &DVector<f64>,
    dir: &DVector<f64>,
    in_working: &[bool],
    parallel: &mut [bool],
    cap: f64,
) -> (f64, Option<usize>) {
    loop {
        let skip: Vec<bool> = in_working
            .iter()
            .zip(parallel.iter())
            .map(|(a, b)| *a || *b)
            .collect();
        let (alpha, block) = ratio_test(qp, h, r, dir, &skip, cap);
        match block {
            Some(i) if kkt.depends(i) => parallel[i] = true,
            _ => return (alpha, block),
        }
    }
}

/// Largest `alpha ≤ cap` keeping `r + alpha·dir` feasible, with the blocking row
/// (lowest index on ties).
fn ratio_test(
    qp: &ParametricQP,
    h: &DVector<f64>,
    r: &DVector<f64>,
    dir: &DVector<f64>,
    in_working: &[bool],
    cap: f64,
) -> (f64, Option<usize>) {
    let mut alpha = cap;
    let mut block = None;
    let scale = dir.amax();
    for (i, row) in qp.rows().iter().enumerate() {
        if in_working[i] || *row == RowShape::Empty {
            continue;
        }
        let den = row.dot(dir);
        if den <= BLOCK_TOL * scale {
            continue;
        }
        let slack = (h[i] - row.dot(r)).max(0.0);
        let a = slack / den;
        if a < alpha {
            alpha = a;
            block = Some(i);
        }
    }
    (alpha, block)
}
