//! Selective p-values and confidence intervals from truncation regions.

mod direction;
mod region;
pub mod truncnorm;

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::pqp::{compute_solution_path, solve_qp_at, PathSegment, SolutionPath};
use crate::problems::{encode, extract_active_set, ActiveSet, ProblemSpec, ZERO_TOL};

pub use direction::{
    eta_changepoint, eta_for, eta_lasso, eta_trend, line_params, Covariance, DirectionKind,
    LineParam, TestDirection,
};
pub use region::{TruncationRegion, MERGE_GAP};
pub use truncnorm::{truncated_normal_cdf, truncated_normal_cdf_sf};

const CI_BRACKET_SD: f64 = 20.0;
const CI_MAX_SD: f64 = 1e3;
const CI_TOL_SD: f64 = 1e-8;

/// How the searched `z` range is chosen for each direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZRangePolicy {
    /// `[-|z_obs| - k·sd, |z_obs| + k·sd]`.
    ObservedCentered {
        half_width_sd: f64,
    },
    Fixed {
        lo: f64,
        hi: f64,
    },
}

impl Default for ZRangePolicy {
    fn default() -> Self {
        ZRangePolicy::ObservedCentered {
            half_width_sd: 20.0,
        }
    }
}

impl ZRangePolicy {
    pub fn range(&self, line: &LineParam) -> (f64, f64) {
        match *self {
            ZRangePolicy::ObservedCentered { half_width_sd } => {
                let w = line.z_obs.abs() + half_width_sd * line.sd();
                (-w, w)
            }
            ZRangePolicy::Fixed { lo, hi } => (lo, hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub j: usize,
    pub z_obs: f64,
    pub var: f64,
    pub selective_p: f64,
    pub naive_p: f64,
    pub ci: (f64, f64),
    pub region: TruncationRegion,
    pub n_segments: usize,
    /// `selective_p < alpha / |M_obs|`.
    pub significant: bool,
}

/// Estimator fit at the observed response.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub r: DVector<f64>,
    pub beta: DVector<f64>,
    pub active: ActiveSet,
}

pub fn fit(spec: &ProblemSpec, y: &DVector<f64>) -> Result<Fit> {
    let qp = encode(spec, y, &DVector::zeros(y.len()))?;
    let pt = solve_qp_at(&qp, 0.0)?;
    let active = extract_active_set(spec, &pt.r, ZERO_TOL);
    Ok(Fit {
        beta: spec.beta(&pt.r),
        r: pt.r,
        active,
    })
}

/// Active set reconstructed at the midpoint of a segment.
pub fn segment_active_set(spec: &ProblemSpec, seg: &PathSegment) -> ActiveSet {
    extract_active_set(spec, &seg.r_at(seg.midpoint()), ZERO_TOL)
}

/// Union of segments on which `keep` holds for the segment's active set.
pub fn region_where(
    path: &SolutionPath,
    spec: &ProblemSpec,
    mut keep: impl FnMut(&ActiveSet, &PathSegment) -> bool,
) -> TruncationRegion {
    TruncationRegion::new(
        path.segments
            .iter()
            .filter(|s| keep(&segment_active_set(spec, s), s))
            .map(|s| (s.z_lo, s.z_hi))
            .collect(),
    )
}

/// `{z : A(y(z)) = target}` over the traced range.
pub fn truncation_region(
    path: &SolutionPath,
    spec: &ProblemSpec,
    target: &ActiveSet,
) -> TruncationRegion {
    region_where(path, spec, |a, _| a.same_indices(target))
}

/// Two-sided selective p-value under `eta' mu = 0`.
pub fn selective_p_value(line: &LineParam, region: &TruncationRegion) -> Result<f64> {
    let (cdf, sf) = truncated_normal_cdf_sf(line.z_obs, 0.0, line.var, region)?;
    Ok((2.0 * cdf.min(sf)).min(1.0))
}

pub fn naive_p_value(line: &LineParam) -> f64 {
    (2.0 * truncnorm::normal_sf(line.z_obs.abs() / line.sd())).min(1.0)
}

/// Classical `z_obs ± q_{1-alpha/2} sd` interval.
pub fn naive_ci(line: &LineParam, alpha: f64) -> (f64, f64) {
    let q = standard_normal().inverse_cdf(1.0 - alpha / 2.0);
    (line.z_obs - q * line.sd(), line.z_obs + q * line.sd())
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Confidence interval for `eta' mu` from inverting the truncated pivot.
pub fn selective_ci(line: &LineParam, region: &TruncationRegion, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    region.require_contains(line.z_obs)?;
    let lo = invert_pivot(line, region, 1.0 - alpha / 2.0)?;
    let hi = invert_pivot(line, region, alpha / 2.0)?;
    Ok((lo, hi))
}

/// `mu` with `F_mu(z_obs) = target`; the pivot decreases in `mu`.
fn invert_pivot(line: &LineParam, region: &TruncationRegion, target: f64) -> Result<f64> {
    let sd = line.sd();
    let z = line.z_obs;
    let pivot = |mu: f64| truncated_normal_cdf(z, mu, line.var, region);
    let mut width = CI_BRACKET_SD * sd;
    let mut lo = z - width;
    while pivot(lo)? < target {
        width *= 2.0;
        if width > CI_MAX_SD * sd {
            return Err(Error::BracketFailure);
        }
        lo = z - width;
    }
    let mut width = CI_BRACKET_SD * sd;
    let mut hi = z + width;
    while pivot(hi)? > target {
        width *= 2.0;
        if width > CI_MAX_SD * sd {
            return Err(Error::BracketFailure);
        }
        hi = z + width;
    }
    while hi - lo > CI_TOL_SD * sd {
        let mid = 0.5 * (lo + hi);
        if pivot(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// An endpoint beyond the bracket limit is reported as infinite.
fn unbounded_or(endpoint: Result<f64>, limit: f64) -> Result<f64> {
    match endpoint {
        Err(Error::BracketFailure) => Ok(limit),
        other => other,
    }
}

/// The data line for `eta` and the solution path along it.
#[derive(Debug, Clone)]
pub struct TracedDirection {
    pub line: LineParam,
    pub path: SolutionPath,
}

pub fn trace_direction(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    eta: &DVector<f64>,
    policy: ZRangePolicy,
) -> Result<TracedDirection> {
    let line = line_params(eta, cov, y_obs)?;
    let (lo, hi) = policy.range(&line);
    let qp = encode(spec, &line.a, &line.b)?;
    let path = compute_solution_path(&qp, lo, hi)?;
    Ok(TracedDirection { line, path })
}

/// P-value, CI and significance flag for one direction and region.
pub fn summarize(
    j: usize,
    line: &LineParam,
    region: TruncationRegion,
    n_segments: usize,
    alpha: f64,
    n_tests: usize,
) -> Result<InferenceResult> {
    region.require_contains(line.z_obs)?;
    let selective_p = selective_p_value(line, &region)?;
    let ci = match selective_ci(line, &region, alpha) {
        Err(Error::BracketFailure) => (
            unbounded_or(
                invert_pivot(line, &region, 1.0 - alpha / 2.0),
                f64::NEG_INFINITY,
            )?,
            unbounded_or(invert_pivot(line, &region, alpha / 2.0), f64::INFINITY)?,
        ),
        other => other?,
    };
    Ok(InferenceResult {
        j,
        z_obs: line.z_obs,
        var: line.var,
        selective_p,
        naive_p: naive_p_value(line),
        ci,
        region,
        n_segments,
        significant: selective_p < alpha / n_tests.max(1) as f64,
    })
}

/// Selective inference for every selected component, with the default directions.
pub fn run_parametric_si(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    alpha: f64,
    policy: ZRangePolicy,
) -> Result<Vec<InferenceResult>> {
    run_parametric_si_with(spec, y_obs, cov, alpha, policy, |active, j| {
        eta_for(spec, active, j)
    })
}

pub fn run_parametric_si_with(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    alpha: f64,
    policy: ZRangePolicy,
    direction: impl Fn(&ActiveSet, usize) -> Result<TestDirection>,
) -> Result<Vec<InferenceResult>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    cov.check(y_obs.len())?;
    let observed = fit(spec, y_obs)?;
    let m = observed.active.len();
    observed
        .active
        .indices
        .iter()
        .map(|&j| {
            let dir = direction(&observed.active, j)?;
            let traced = trace_direction(spec, y_obs, cov, &dir.eta, policy)?;
            let region = truncation_region(&traced.path, spec, &observed.active);
            summarize(j, &traced.line, region, traced.path.len(), alpha, m)
        })
        .collect()
}
