//! Parametric quadratic programming.
//!
//! A [`ParametricQP`] is the family
//!
//! ```text
//! min_r  ½ rᵀ P r + (q0 + q1 z)ᵀ r   s.t.  G r ≤ h0 + h1 z
//! ```
//!
//! indexed by a scalar `z`. Within an interval where the set of strictly positive
//! multipliers is constant, the optimum moves linearly in `z`; [`compute_solution_path`]
//! walks those intervals from `z_min` to `z_max`.

mod kkt;
mod path;
mod solver;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use path::{
    compute_solution_path, compute_solution_path_with, piecewise_direction, step_size, PathOptions,
    PathSegment, SolutionPath, TerminalCause,
};
pub use solver::{solve_qp_at, solve_qp_from, KktResiduals, PrimalDualPoint};

/// Multipliers above this value define the active set.
pub const ACTIVE_TOL: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_TOL: f64 = -1e-8;

/// Produces a feasible primal point for a given `z`.
pub type FeasibleStart = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Sparsity shape of one constraint row.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum RowShape {
    /// All-zero row: `0 ≤ h(z)`.
    Empty,
    /// Single nonzero `coef` at `col`.
    Bound {
        col: usize,
        coef: f64,
    },
    General {
        entries: Vec<(usize, f64)>,
    },
}

impl RowShape {
    fn of(row: impl Iterator<Item = f64>) -> Self {
        let entries: Vec<(usize, f64)> = row.enumerate().filter(|(_, v)| *v != 0.0).collect();
        match entries.len() {
            0 => RowShape::Empty,
            1 => RowShape::Bound {
                col: entries[0].0,
                coef: entries[0].1,
            },
            _ => RowShape::General { entries },
        }
    }

    pub(crate) fn dot(&self, x: &DVector<f64>) -> f64 {
        match self {
            RowShape::Empty => 0.0,
            RowShape::Bound { col, coef } => coef * x[*col],
            RowShape::General { entries } => entries.iter().map(|&(c, v)| v * x[c]).sum(),
        }
    }
}

#[derive(Clone)]
pub struct ParametricQP {
    p: DMatrix<f64>,
    g: DMatrix<f64>,
    q0: DVector<f64>,
    q1: DVector<f64>,
    h0: DVector<f64>,
    h1: DVector<f64>,
    rows: Vec<RowShape>,
    feasible_start: Option<FeasibleStart>,
}

impl fmt::Debug for ParametricQP {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricQP")
            .field("dim", &self.dim())
            .field("n_constraints", &self.n_constraints())
            .field("has_feasible_start", &self.feasible_start.is_some())
            .finish()
    }
}

impl ParametricQP {
    /// Validates dimensions and symmetry of `p`.
    pub fn new(
        p: DMatrix<f64>,
        g: DMatrix<f64>,
        q0: DVector<f64>,
        q1: DVector<f64>,
        h0: DVector<f64>,
        h1: DVector<f64>,
    ) -> Result<Self> {
        let d = p.nrows();
        if p.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "P is {}x{}",
                d,
                p.ncols()
            )));
        }
        if g.ncols() != d && !(g.nrows() == 0) {
            return Err(Error::DimensionMismatch(format!(
                "G has {} columns, expected {d}",
                g.ncols()
            )));
        }
        if q0.len() != d || q1.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "q0/q1 have lengths {}/{}, expected {d}",
                q0.len(),
                q1.len()
            )));
        }
        let m = g.nrows();
        if h0.len() != m || h1.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "h0/h1 have lengths {}/{}, expected {m}",
                h0.len(),
                h1.len()
            )));
        }
        let finite = p.iter().chain(g.iter()).chain(q0.iter()).chain(q1.iter());
        if finite
            .chain(h0.iter())
            .chain(h1.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidProblem("non-finite entry".into()));
        }
        let asym = (0..d)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (p[(i, j)] - p[(j, i)]).abs())
            .fold(0.0, f64::max);
        if asym > SYMMETRY_TOL {
            return Err(Error::InvalidProblem(format!(
                "P is not symmetric (max gap {asym:.3e})"
            )));
        }
        let g = if m == 0 { DMatrix::zeros(0, d) } else { g };
        let rows = (0..m)
            .map(|i| RowShape::of(g.row(i).iter().copied()))
            .collect();
        Ok(Self {
            p,
            g,
            q0,
            q1,
            h0,
            h1,
            rows,
            feasible_start: None,
        })
    }

    /// Attaches a routine that returns a feasible point for any `z`, used to start
    /// cold solves instead of a phase-one problem.
    pub fn with_feasible_start(mut self, start: FeasibleStart) -> Self {
        self.feasible_start = Some(start);
        self
    }

    /// Expensive check that `P` has no eigenvalue below `-1e-8`.
    pub fn check_psd(&self) -> Result<()> {
        if self.dim() == 0 {
            return Ok(());
        }
        let eig = self.p.clone().symmetric_eigen();
        let min = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min < PSD_TOL {
            return Err(Error::InvalidProblem(format!("P has eigenvalue {min:.3e}")));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.g.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn q0(&self) -> &DVector<f64> {
        &self.q0
    }

    pub fn q1(&self) -> &DVector<f64> {
        &self.q1
    }

    pub fn h0(&self) -> &DVector<f64> {
        &self.h0
    }

    pub fn h1(&self) -> &DVector<f64> {
        &self.h1
    }

    pub fn q_at(&self, z: f64) -> DVector<f64> {
        &self.q0 + &self.q1 * z
    }

    pub fn h_at(&self, z: f64) -> DVector<f64> {
        &self.h0 + &self.h1 * z
    }

    pub(crate) fn rows(&self) -> &[RowShape] {
        &self.rows
    }

    pub(crate) fn row_dot(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.rows[i].dot(x)
    }

    pub(crate) fn feasible_start(&self) -> Option<&FeasibleStart> {
        self.feasible_start.as_ref()
    }

    /// Objective value `½ rᵀPr + q(z)ᵀr`.
    pub fn objective(&self, r: &DVector<f64>, z: f64) -> f64 {
        0.5 * r.dot(&(&self.p * r)) + self.q_at(z).dot(r)
    }

    /// Largest constraint violation `max_i (G r - h(z))_i`, or `-inf` without constraints.
    pub fn max_violation(&self, r: &DVector<f64>, z: f64) -> f64 {
        (0..self.n_constraints())
            .map(|i| self.row_dot(i, r) - self.h0[i] - self.h1[i] * z)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}
