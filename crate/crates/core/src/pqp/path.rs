use nalgebra::DVector;

use super::kkt::ReducedKkt;
use super::solver::{solve_qp_at, solve_qp_from, PrimalDualPoint};
use super::ParametricQP;
use crate::error::{Error, Result};

const TIE_TOL: f64 = 1e-12;
const FEAS_TOL: f64 = 1e-9;

/// Why a segment ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalCause {
    ConstraintEntered(usize),
    MultiplierLeft(usize),
    RangeEnd,
}

/// One linear piece `r(z) = r_at_lo + psi (z - z_lo)` on `[z_lo, z_hi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    pub z_lo: f64,
    pub z_hi: f64,
    pub r_at_lo: DVector<f64>,
    pub psi: DVector<f64>,
    /// Multipliers of `active`, in the same order.
    pub u_at_lo: DVector<f64>,
    pub gamma: DVector<f64>,
    pub active: Vec<usize>,
    pub terminal_cause: TerminalCause,
}

impl PathSegment {
    pub fn r_at(&self, z: f64) -> DVector<f64> {
        &self.r_at_lo + &self.psi * (z - self.z_lo)
    }

    pub fn u_active_at(&self, z: f64) -> DVector<f64> {
        &self.u_at_lo + &self.gamma * (z - self.z_lo)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.z_lo + self.z_hi)
    }

    pub fn contains(&self, z: f64) -> bool {
        self.z_lo <= z && z < self.z_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    /// Offset past a breakpoint at which the next segment is solved.
    pub delta_z: f64,
    pub min_delta_z: f64,
    pub max_segments: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self {
            delta_z: 1e-4,
            min_delta_z: 1e-8,
            max_segments: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub segments: Vec<PathSegment>,
    /// Re-solves where more than one index still changed at the smallest offset.
    pub multi_change_events: usize,
    /// Breakpoints across which the active set did not change.
    pub spurious_breakpoints: usize,
}

impl SolutionPath {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn z_min(&self) -> f64 {
        self.segments.first().map_or(f64::NAN, |s| s.z_lo)
    }

    pub fn z_max(&self) -> f64 {
        self.segments.last().map_or(f64::NAN, |s| s.z_hi)
    }

    /// Segment containing `z`; the right end of the range maps to the last segment.
    pub fn segment_at(&self, z: f64) -> Option<&PathSegment> {
        if !(z >= self.z_min() && z <= self.z_max()) {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.z_hi <= z);
        self.segments.get(idx.min(self.segments.len() - 1))
    }

    /// Interior breakpoints in ascending order.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.segments.iter().skip(1).map(|s| s.z_lo).collect()
    }
}

/// Solves the block system for the slopes `(psi, gamma)` of the active set.
pub fn piecewise_direction(
    qp: &ParametricQP,
    active: &[usize],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kkt = ReducedKkt::new(qp, active);
    let (psi, gamma) = kkt.solve(qp.q1(), qp.h1())?;
    Ok((psi, DVector::from_vec(gamma)))
}

/// Distance from `point.z` to the next breakpoint and the index that causes it.
pub fn step_size(
    qp: &ParametricQP,
    point: &PrimalDualPoint,
    psi: &DVector<f64>,
    gamma: &DVector<f64>,
) -> (f64, TerminalCause) {
    let m = qp.n_constraints();
    let mut is_active = vec![false; m];
    for &i in &point.active {
        is_active[i] = true;
    }
    let (mut t1, mut enter) = (f64::INFINITY, None);
    for (i, _) in is_active.iter().enumerate().filter(|(_, &a)| !a) {
        let slack = qp.row_dot(i, &point.r) - qp.h0()[i] - qp.h1()[i] * point.z;
        let rate = qp.row_dot(i, psi) - qp.h1()[i];
        let t = -slack / rate;
        if t > 0.0 && t < t1 {
            t1 = t;
            enter = Some(i);
        }
    }
    let (mut t2, mut leave) = (f64::INFINITY, None);
    for (k, &i) in point.active.iter().enumerate() {
        let t = -point.u[i] / gamma[k];
        if t > 0.0 && (t < t2 || (t == t2 && leave.is_some_and(|l| i < l))) {
            t2 = t;
            leave = Some(i);
        }
    }
    match (enter, leave) {
        (None, None) => (f64::INFINITY, TerminalCause::RangeEnd),
        (Some(i), None) => (t1, TerminalCause::ConstraintEntered(i)),
        (None, Some(i)) => (t2, TerminalCause::MultiplierLeft(i)),
        (Some(i), Some(j)) => {
            if t1 <= t2 || (t1 - t2).abs() <= TIE_TOL * t1.max(t2).max(1.0) {
                (t1, TerminalCause::ConstraintEntered(i))
            } else {
                (t2, TerminalCause::MultiplierLeft(j))
            }
        }
    }
}

/// Traces the solution path over `[z_min, z_max]` with default options.
pub fn compute_solution_path(qp: &ParametricQP, z_min: f64, z_max: f64) -> Result<SolutionPath> {
    compute_solution_path_with(qp, z_min, z_max, &PathOptions::default())
}

pub fn compute_solution_path_with(
    qp: &ParametricQP,
    z_min: f64,
    z_max: f64,
    opts: &PathOptions,
) -> Result<SolutionPath> {
    if !(z_min < z_max) || !z_min.is_finite() || !z_max.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "bad z range [{z_min}, {z_max}]"
        )));
    }
    let mut segments: Vec<PathSegment> = Vec::new();
    let mut multi_change_events = 0;
    let mut spurious_breakpoints = 0;
    let mut z_k = z_min;
    let mut prev: Option<(Vec<usize>, TerminalCause)> = None;

    while z_k < z_max {
        if segments.len() >= opts.max_segments {
            return Err(Error::PathStalled {
                z: z_k,
                reason: "segment limit reached",
            });
        }
        let mut dz = opts.delta_z.min(0.5 * (z_max - z_k));
        let guess = prev.as_ref().map(|(active, cause)| toggled(active, *cause));
        let mut pt;
        let mut tried: Option<Vec<usize>> = None;
        loop {
            pt = match (&tried, &guess) {
                (Some(g), _) | (None, Some(g)) => solve_qp_from(qp, z_k + dz, g)?,
                (None, None) => solve_qp_at(qp, z_k + dz)?,
            };
            let changes = prev
                .as_ref()
                .map_or(1, |(a, _)| symmetric_difference(a, &pt.active));
            if changes <= 1 {
                if changes == 0 {
                    spurious_breakpoints += 1;
                }
                break;
            }
            // The same multi-row change at half the offset means the rows really do
            // switch together here, unless a sliver segment hides below the offset.
            if dz * 0.5 < opts.min_delta_z
                || (tried.as_ref() == Some(&pt.active) && extends_back_to(qp, &pt, z_k))
            {
                multi_change_events += 1;
                break;
            }
            tried = Some(pt.active.clone());
            dz *= 0.5;
        }

        let (psi, gamma) = match piecewise_direction(qp, &pt.active) {
            Ok(dir) => dir,
            Err(Error::SingularKkt { .. }) => {
                let (p, dir) = retry_singular(qp, z_k, dz, z_max)?;
                pt = p;
                dir
            }
            Err(e) => return Err(e),
        };
        let (t, mut cause) = step_size(qp, &pt, &psi, &gamma);
        let mut z_hi = pt.z + t;
        if !(z_hi < z_max) {
            z_hi = z_max;
            cause = TerminalCause::RangeEnd;
        }
        if !(z_hi > z_k) {
            return Err(Error::PathStalled {
                z: z_k,
                reason: "non-positive step",
            });
        }
        let back = pt.z - z_k;
        let u_act = DVector::from_iterator(pt.active.len(), pt.active.iter().map(|&i| pt.u[i]));
        segments.push(PathSegment {
            z_lo: z_k,
            z_hi,
            r_at_lo: &pt.r - &psi * back,
            u_at_lo: u_act - &gamma * back,
            psi,
            gamma,
            active: pt.active.clone(),
            terminal_cause: cause,
        });
        prev = Some((pt.active, cause));
        z_k = z_hi;
    }
    Ok(SolutionPath {
        segments,
        multi_change_events,
        spurious_breakpoints,
    })
}

/// Whether the segment solved at `pt` stays primal and dual feasible back to `z_lo`.
fn extends_back_to(qp: &ParametricQP, pt: &PrimalDualPoint, z_lo: f64) -> bool {
    let Ok((psi, gamma)) = piecewise_direction(qp, &pt.active) else {
        return true;
    };
    let back = pt.z - z_lo;
    let r = &pt.r - &psi * back;
    let scale = 1.0 + pt.r.amax();
    let u_ok = pt
        .active
        .iter()
        .zip(gamma.iter())
        .all(|(&i, g)| pt.u[i] - g * back >= -FEAS_TOL * (1.0 + pt.u[i].abs()));
    u_ok && qp.max_violation(&r, z_lo) <= FEAS_TOL * scale
}

/// Slope of the primal and dual parts along `z`.
type Direction = (DVector<f64>, DVector<f64>);

/// Moves the solve point further into the segment until the block matrix is regular.
fn retry_singular(
    qp: &ParametricQP,
    z_k: f64,
    dz: f64,
    z_max: f64,
) -> Result<(PrimalDualPoint, Direction)> {
    let mut step = dz;
    let mut last = Error::SingularKkt { pivot: 0.0 };
    for _ in 0..8 {
        step *= 2.0;
        if z_k + step >= z_max {
            break;
        }
        let pt = solve_qp_at(qp, z_k + step)?;
        match piecewise_direction(qp, &pt.active) {
            Ok(dir) => return Ok((pt, dir)),
            Err(e) => last = e,
        }
    }
    Err(last)
}

fn toggled(active: &[usize], cause: TerminalCause) -> Vec<usize> {
    let mut next = active.to_vec();
    match cause {
        TerminalCause::ConstraintEntered(i) => {
            if let Err(pos) = next.binary_search(&i) {
                next.insert(pos, i);
            }
        }
        TerminalCause::MultiplierLeft(i) => next.retain(|&k| k != i),
        TerminalCause::RangeEnd => {}
    }
    next
}

fn symmetric_difference(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                n += 1;
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                n += 1;
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    n + (a.len() - i) + (b.len() - j)
}
