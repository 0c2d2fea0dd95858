//! Comparison methods: over-conditioned inference, data splitting, and the full and
//! stable partial targets.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cv_event::{cv_regions, cv_select, FoldSplit};
use crate::error::{Error, Result};
use crate::inference::{
    eta_for, fit, line_params, naive_ci, naive_p_value, region_where, summarize, trace_direction,
    truncation_region, Covariance, DirectionKind, InferenceResult, TestDirection, TruncationRegion,
    ZRangePolicy,
};
use crate::linalg;
use crate::pqp::SolutionPath;
use crate::problems::{ActiveSet, EstimatorKind, PenaltyKind, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    OverConditioned,
    DataSplit { fraction: f64, seed: u64 },
    FullTarget,
    StablePartialL1 { lambda_high: f64 },
    StablePartialCustom { cutoff: f64 },
}

impl BaselineKind {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<()> {
        match *self {
            BaselineKind::DataSplit { fraction, .. } if !(fraction > 0.0 && fraction < 1.0) => Err(
                Error::InvalidArgument(format!("split fraction must be in (0, 1), got {fraction}")),
            ),
            BaselineKind::StablePartialL1 { lambda_high } if !(lambda_high >= spec.lambda()) => {
                Err(Error::InvalidArgument(format!(
                    "lambda_high = {lambda_high} must be at least lambda = {}",
                    spec.lambda()
                )))
            }
            BaselineKind::StablePartialCustom { cutoff } if !(cutoff >= 0.0) => Err(
                Error::InvalidArgument(format!("cutoff must be non-negative, got {cutoff}")),
            ),
            _ => Ok(()),
        }
    }
}

/// The run of consecutive segments around `z_obs` sharing its active constraint set.
pub fn oc_region(path: &SolutionPath, z_obs: f64) -> TruncationRegion {
    let segs = &path.segments;
    let Some(k) = segs
        .iter()
        .position(|s| s.contains(z_obs))
        .or_else(|| (z_obs == path.z_max()).then(|| segs.len().saturating_sub(1)))
    else {
        return TruncationRegion::default();
    };
    let active = &segs[k].active;
    let mut lo = k;
    while lo > 0 && &segs[lo - 1].active == active {
        lo -= 1;
    }
    let mut hi = k;
    while hi + 1 < segs.len() && &segs[hi + 1].active == active {
        hi += 1;
    }
    TruncationRegion::interval(segs[lo].z_lo, segs[hi].z_hi)
}

/// Segments whose active set contains `j`.
pub fn full_target_region(path: &SolutionPath, spec: &ProblemSpec, j: usize) -> TruncationRegion {
    region_where(path, spec, |a, _| a.contains(j))
}

/// `X (X'X)^{-1} e_j` over all columns.
pub fn eta_full_target(spec: &ProblemSpec, j: usize) -> Result<TestDirection> {
    let x = spec.design().x();
    if j >= x.ncols() {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: x.ncols(),
        });
    }
    if x.nrows() < x.ncols() || linalg::rank(x, 1e-10) < x.ncols() {
        return Err(Error::RankDeficient);
    }
    let eta = linalg::projection_contrast(x, j)?;
    Ok(TestDirection {
        eta,
        j,
        kind: DirectionKind::FullTarget,
    })
}

/// Projection contrast of `j` on the columns `stable ∪ {j}`.
pub fn eta_partial_target(
    spec: &ProblemSpec,
    stable: &ActiveSet,
    j: usize,
) -> Result<TestDirection> {
    let mut cols = stable.indices.clone();
    if !stable.contains(j) {
        cols.push(j);
        cols.sort_unstable();
    }
    let pos = cols.binary_search(&j).expect("j was inserted");
    let xm = linalg::select_columns(spec.design().x(), &cols);
    let eta = linalg::projection_contrast(&xm, pos)?;
    Ok(TestDirection {
        eta,
        j,
        kind: DirectionKind::PartialTarget,
    })
}

fn check_regression(spec: &ProblemSpec, what: &str) -> Result<()> {
    let structured = spec.kind() == EstimatorKind::GeneralizedLasso
        && spec.penalty().kind() != PenaltyKind::Identity;
    if structured {
        return Err(Error::InvalidArgument(format!(
            "{what} applies to feature-selection problems only"
        )));
    }
    Ok(())
}

/// Least-squares refit on `cols`, as `(alpha0, alpha1)` with refit `alpha0 + alpha1 z`
/// along `y = a + b z`.
fn refit_line(
    spec: &ProblemSpec,
    cols: &[usize],
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let xm = linalg::select_columns(spec.design().x(), cols);
    let gram = xm.transpose() * &xm;
    let inv = linalg::inverse(&gram).map_err(|_| Error::RankDeficient)?;
    let h = inv * xm.transpose();
    Ok((&h * a, &h * b))
}

fn refit_stable(refit: &DVector<f64>, cols: &[usize], cutoff: f64) -> ActiveSet {
    ActiveSet::from_indices(
        cols.iter()
            .zip(refit.iter())
            .filter(|(_, v)| v.abs() >= cutoff)
            .map(|(&k, _)| k)
            .collect(),
    )
}

/// Stable set of a partial-target baseline at the observed data.
#[derive(Debug, Clone)]
pub struct StablePartial {
    pub selected: ActiveSet,
    pub stable: ActiveSet,
    pub results: Vec<InferenceResult>,
}

pub fn stable_partial_targets(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    alpha: f64,
    kind: BaselineKind,
    policy: ZRangePolicy,
) -> Result<StablePartial> {
    check_regression(spec, "stable partial targets")?;
    kind.validate(spec)?;
    let observed = fit(spec, y_obs)?;
    let m = &observed.active;
    let stable = match kind {
        BaselineKind::StablePartialL1 { lambda_high } => {
            fit(&spec.with_lambda(lambda_high)?, y_obs)?.active
        }
        BaselineKind::StablePartialCustom { cutoff } => {
            let (refit, _) = refit_line(spec, &m.indices, y_obs, &DVector::zeros(y_obs.len()))?;
            let h = refit_stable(&refit, &m.indices, cutoff);
            if h.is_empty() {
                return Err(Error::EmptyStableSet);
            }
            h
        }
        _ => {
            return Err(Error::InvalidArgument(
                "not a stable partial target baseline".into(),
            ))
        }
    };
    let results = m
        .indices
        .iter()
        .map(|&j| {
            let dir = eta_partial_target(spec, &stable, j)?;
            let traced = trace_direction(spec, y_obs, cov, &dir.eta, policy)?;
            let region = match kind {
                BaselineKind::StablePartialL1 { lambda_high } => {
                    let high = spec.with_lambda(lambda_high)?;
                    let eta = &dir.eta;
                    let high_path =
                        trace_direction(&high, y_obs, cov, eta, fixed_range(&traced.path))?.path;
                    full_target_region(&traced.path, spec, j)
                        .intersect(&truncation_region(&high_path, &high, &stable))
                }
                BaselineKind::StablePartialCustom { cutoff } => {
                    let (a0, a1) = refit_line(spec, &m.indices, &traced.line.a, &traced.line.b)?;
                    let (lo, hi) = (traced.path.z_min(), traced.path.z_max());
                    truncation_region(&traced.path, spec, m).intersect(&cutoff_region(
                        &a0, &a1, &m.indices, cutoff, &stable, lo, hi,
                    ))
                }
                _ => unreachable!(),
            };
            summarize(j, &traced.line, region, traced.path.len(), alpha, m.len())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StablePartial {
        selected: observed.active,
        stable,
        results,
    })
}

fn fixed_range(path: &SolutionPath) -> ZRangePolicy {
    ZRangePolicy::Fixed {
        lo: path.z_min(),
        hi: path.z_max(),
    }
}

/// `{z in [lo, hi] : {k : |alpha0_k + alpha1_k z| >= c} = stable}`.
fn cutoff_region(
    a0: &DVector<f64>,
    a1: &DVector<f64>,
    cols: &[usize],
    cutoff: f64,
    stable: &ActiveSet,
    lo: f64,
    hi: f64,
) -> TruncationRegion {
    let mut cuts = vec![lo, hi];
    for k in 0..a0.len() {
        if a1[k] != 0.0 {
            for c in [cutoff, -cutoff] {
                let z = (c - a0[k]) / a1[k];
                if z > lo && z < hi {
                    cuts.push(z);
                }
            }
        }
    }
    cuts.sort_by(f64::total_cmp);
    let pieces = cuts
        .windows(2)
        .filter(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            refit_stable(&(a0 + a1 * mid), cols, cutoff) == *stable
        })
        .map(|w| (w[0], w[1]))
        .collect();
    TruncationRegion::new(pieces)
}

/// Over-conditioned inference: the region is the constant-active-constraint run at `z_obs`.
pub fn over_conditioned_si(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    alpha: f64,
    policy: ZRangePolicy,
) -> Result<Vec<InferenceResult>> {
    let observed = fit(spec, y_obs)?;
    let m = observed.active.len();
    observed
        .active
        .indices
        .iter()
        .map(|&j| {
            let dir = eta_for(spec, &observed.active, j)?;
            let traced = trace_direction(spec, y_obs, cov, &dir.eta, policy)?;
            let region = oc_region(&traced.path, traced.line.z_obs);
            summarize(j, &traced.line, region, traced.path.len(), alpha, m)
        })
        .collect()
}

pub fn full_target_si(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    alpha: f64,
    policy: ZRangePolicy,
) -> Result<Vec<InferenceResult>> {
    check_regression(spec, "the full target")?;
    let observed = fit(spec, y_obs)?;
    let m = observed.active.len();
    observed
        .active
        .indices
        .iter()
        .map(|&j| {
            let dir = eta_full_target(spec, j)?;
            let traced = trace_direction(spec, y_obs, cov, &dir.eta, policy)?;
            let region = full_target_region(&traced.path, spec, j);
            summarize(j, &traced.line, region, traced.path.len(), alpha, m)
        })
        .collect()
}

/// Selects on a random `fraction` of the rows and runs classical z-tests on the rest.
pub fn data_split_inference(
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    fraction: f64,
    seed: u64,
    alpha: f64,
) -> Result<Vec<InferenceResult>> {
    check_regression(spec, "data splitting")?;
    BaselineKind::DataSplit { fraction, seed }.validate(spec)?;
    cov.check(y_obs.len())?;
    let n = spec.n();
    let n1 = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations to split".into(),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut first, mut second) = (order[..n1].to_vec(), order[n1..].to_vec());
    first.sort_unstable();
    second.sort_unstable();

    let select_spec = spec.with_design(spec.design().subset_rows(&first)?)?;
    let selected = fit(&select_spec, &linalg::select_entries(y_obs, &first))?.active;
    if selected.is_empty() {
        return Err(Error::EmptySelection);
    }
    let infer_design = spec.design().subset_rows(&second)?;
    let y2 = linalg::select_entries(y_obs, &second);
    let cov2 = cov.restrict(&second);
    let m = selected.len();
    selected
        .indices
        .iter()
        .map(|&j| {
            let xm = linalg::select_columns(infer_design.x(), &selected.indices);
            let pos = selected.position(j).expect("selected");
            let eta = linalg::projection_contrast(&xm, pos)?;
            let line = line_params(&eta, &cov2, &y2)?;
            let p = naive_p_value(&line);
            Ok(InferenceResult {
                j,
                z_obs: line.z_obs,
                var: line.var,
                selective_p: p,
                naive_p: p,
                ci: naive_ci(&line, alpha),
                region: TruncationRegion::interval(f64::NEG_INFINITY, f64::INFINITY),
                n_segments: 0,
                significant: p < alpha / m as f64,
            })
        })
        .collect()
}

pub fn run_baseline(
    kind: BaselineKind,
    spec: &ProblemSpec,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    alpha: f64,
    policy: ZRangePolicy,
) -> Result<Vec<InferenceResult>> {
    match kind {
        BaselineKind::OverConditioned => over_conditioned_si(spec, y_obs, cov, alpha, policy),
        BaselineKind::DataSplit { fraction, seed } => {
            data_split_inference(spec, y_obs, cov, fraction, seed, alpha)
        }
        BaselineKind::FullTarget => full_target_si(spec, y_obs, cov, alpha, policy),
        BaselineKind::StablePartialL1 { .. } | BaselineKind::StablePartialCustom { .. } => {
            stable_partial_targets(spec, y_obs, cov, alpha, kind, policy).map(|s| s.results)
        }
    }
}

/// CV-aware inference that also fixes the active constraints of the full-data path and
/// of every fold path at `z_obs`.
#[allow(clippy::too_many_arguments)]
pub fn over_conditioned_cv_si(
    spec: &ProblemSpec,
    lambdas: &[f64],
    y_obs: &DVector<f64>,
    cov: &Covariance,
    k: usize,
    alpha: f64,
    seed: u64,
    policy: ZRangePolicy,
) -> Result<Vec<InferenceResult>> {
    let split = FoldSplit::new(spec.n(), k, seed)?;
    let spec_obs = spec.with_lambda(lambdas[cv_select(spec, lambdas, &split, y_obs)?])?;
    let observed = fit(&spec_obs, y_obs)?;
    let m = observed.active.len();
    observed
        .active
        .indices
        .iter()
        .map(|&j| {
            let dir = eta_for(&spec_obs, &observed.active, j)?;
            let regions = cv_regions(
                &spec_obs,
                lambdas,
                &split,
                y_obs,
                cov,
                &dir.eta,
                &observed.active,
                policy,
            )?;
            let z = regions.line.z_obs;
            let region = regions.fold_paths.iter().fold(
                oc_region(&regions.full_path, z).intersect(&regions.z2),
                |acc, p| acc.intersect(&oc_region(p, z)),
            );
            summarize(j, &regions.line, region, regions.full_path.len(), alpha, m)
        })
        .collect()
}
