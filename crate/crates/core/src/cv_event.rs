//! Cross-validation selection events.
//!
//! Along the data line every fold fit is piecewise linear in `z`, so each validation
//! error is piecewise quadratic and the set of `z` where the observed `lambda` wins the
//! comparison is a finite union of intervals.
//!
//! Caveat: treating the validation curves this way assumes the number of features does
//! not grow with `n`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::{
    eta_for, fit, line_params, summarize, truncation_region, Covariance, InferenceResult,
    LineParam, TruncationRegion, ZRangePolicy,
};
use crate::linalg;
use crate::pqp::{compute_solution_path, SolutionPath};
use crate::problems::{encode, ProblemSpec};

const QUAD_DEGENERATE: f64 = 1e-12;
const TIE_REL: f64 = 1e-10;

/// Fixed assignment of observations to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    k: usize,
    assignments: Vec<usize>,
    folds: Vec<(Vec<usize>, Vec<usize>)>,
}

impl FoldSplit {
    /// Random balanced folds from `seed`.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 || n < k {
            return Err(Error::InvalidArgument(format!(
                "need n >= K >= 2, got n = {n}, K = {k}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignments[i] = pos % k;
        }
        Self::from_assignments(assignments, k)
    }

    pub fn from_assignments(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument("need at least two folds".into()));
        }
        let mut folds = vec![(Vec::new(), Vec::new()); k];
        for (i, &f) in assignments.iter().enumerate() {
            if f >= k {
                return Err(Error::IndexOutOfRange { index: f, len: k });
            }
            for (g, fold) in folds.iter_mut().enumerate() {
                if g == f {
                    fold.1.push(i);
                } else {
                    fold.0.push(i);
                }
            }
        }
        if folds.iter().any(|(_, val)| val.is_empty()) {
            return Err(Error::InvalidArgument(
                "every fold needs at least one observation".into(),
            ));
        }
        Ok(Self {
            k,
            assignments,
            folds,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// `(train, validation)` indices of fold `f`.
    pub fn fold(&self, f: usize) -> (&[usize], &[usize]) {
        let (t, v) = &self.folds[f];
        (t, v)
    }
}

/// Piecewise-linear `beta(z)` of one training fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    pub lambda: f64,
    /// Segment boundaries, one more than the number of segments.
    pub knots: Vec<f64>,
    /// `beta` at the left end of each segment.
    pub values: Vec<DVector<f64>>,
    pub slopes: Vec<DVector<f64>>,
}

impl CoefficientPath {
    pub fn from_path(spec: &ProblemSpec, path: &SolutionPath) -> Self {
        let mut knots: Vec<f64> = path.segments.iter().map(|s| s.z_lo).collect();
        knots.push(path.z_max());
        Self {
            lambda: spec.lambda(),
            knots,
            values: path
                .segments
                .iter()
                .map(|s| spec.beta(&s.r_at_lo))
                .collect(),
            slopes: path.segments.iter().map(|s| spec.beta(&s.psi)).collect(),
        }
    }

    pub fn beta_at(&self, z: f64) -> DVector<f64> {
        let k = segment_index(&self.knots, z);
        &self.values[k] + &self.slopes[k] * (z - self.knots[k])
    }
}

/// Traces the fit of `spec` along `y(z) = a + b z` and keeps its `beta` part.
pub fn coefficient_path(
    spec: &ProblemSpec,
    a: &DVector<f64>,
    b: &DVector<f64>,
    z_range: (f64, f64),
) -> Result<(CoefficientPath, SolutionPath)> {
    let qp = encode(spec, a, b)?;
    let path = compute_solution_path(&qp, z_range.0, z_range.1)?;
    Ok((CoefficientPath::from_path(spec, &path), path))
}

fn segment_index(knots: &[f64], z: f64) -> usize {
    let segs = knots.len() - 1;
    knots[1..].partition_point(|&k| k <= z).min(segs - 1)
}

/// One piece `c2 z² + c1 z + c0` on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPiece {
    pub lo: f64,
    pub hi: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl QuadPiece {
    pub fn eval(&self, z: f64) -> f64 {
        (self.c2 * z + self.c1) * z + self.c0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseQuadratic {
    pub pieces: Vec<QuadPiece>,
}

impl PiecewiseQuadratic {
    pub fn eval(&self, z: f64) -> f64 {
        self.piece_at(z).eval(z)
    }

    pub fn piece_at(&self, z: f64) -> &QuadPiece {
        let idx = self.pieces.partition_point(|p| p.hi <= z);
        &self.pieces[idx.min(self.pieces.len() - 1)]
    }

    pub fn knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        if let Some(last) = self.pieces.last() {
            k.push(last.hi);
        }
        k
    }
}

/// `½‖a_val + b_val z - X_val beta(z)‖²` along a coefficient path.
pub fn validation_error_curve(
    path: &CoefficientPath,
    x_val: &DMatrix<f64>,
    a_val: &DVector<f64>,
    b_val: &DVector<f64>,
) -> PiecewiseQuadratic {
    let pieces = (0..path.values.len())
        .map(|k| {
            let (lo, hi) = (path.knots[k], path.knots[k + 1]);
            let s = &path.slopes[k];
            let beta0 = &path.values[k] - s * lo;
            let u0 = a_val - x_val * beta0;
            let u1 = b_val - x_val * s;
            QuadPiece {
                lo,
                hi,
                c2: 0.5 * u1.norm_squared(),
                c1: u0.dot(&u1),
                c0: 0.5 * u0.norm_squared(),
            }
        })
        .collect();
    PiecewiseQuadratic { pieces }
}

/// Pointwise mean of curves over the union of their knots.
pub fn kfold_mean_error(curves: &[PiecewiseQuadratic]) -> Result<PiecewiseQuadratic> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no curves to average".into()));
    }
    let knots = merged_knots(curves.iter());
    let k = curves.len() as f64;
    let pieces = knots
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            let (mut c2, mut c1, mut c0) = (0.0, 0.0, 0.0);
            for c in curves {
                let p = c.piece_at(mid);
                c2 += p.c2;
                c1 += p.c1;
                c0 += p.c0;
            }
            QuadPiece {
                lo: w[0],
                hi: w[1],
                c2: c2 / k,
                c1: c1 / k,
                c0: c0 / k,
            }
        })
        .collect();
    Ok(PiecewiseQuadratic { pieces })
}

fn merged_knots<'a>(curves: impl Iterator<Item = &'a PiecewiseQuadratic>) -> Vec<f64> {
    let mut knots: Vec<f64> = curves.flat_map(|c| c.knots()).collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    knots
}

fn tie_tol(e1: f64, e2: f64) -> f64 {
    TIE_REL * (e1.abs() + e2.abs()).max(f64::MIN_POSITIVE)
}

/// Index of the winning `lambda` for mean errors `errors[i]` at `lambdas[i]`: the
/// lowest error, ties (within a relative `1e-10`) going to the smaller `lambda`.
pub fn select_lambda(lambdas: &[f64], errors: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
    let mut best = order[0];
    for &i in &order[1..] {
        if errors[i] < errors[best] - tie_tol(errors[i], errors[best]) {
            best = i;
        }
    }
    best
}

/// `{z : lambda_obs wins}` given each candidate's mean validation curve.
pub fn z2_region(
    curves: &[(f64, PiecewiseQuadratic)],
    lambda_obs: f64,
) -> Result<TruncationRegion> {
    let obs = curves
        .iter()
        .find(|(l, _)| *l == lambda_obs)
        .map(|(_, c)| c)
        .ok_or_else(|| Error::InvalidArgument(format!("lambda {lambda_obs} is not a candidate")))?;
    let (lo, hi) = (obs.pieces[0].lo, obs.pieces.last().expect("pieces").hi);
    let mut region = TruncationRegion::interval(lo, hi);
    for (lambda, other) in curves {
        if *lambda == lambda_obs {
            continue;
        }
        let wins_ties = *lambda > lambda_obs;
        region = region.intersect(&winning_set(obs, other, wins_ties));
    }
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(region)
}

/// Where `e_obs < e_other`, with ties counted as wins when `wins_ties`.
fn winning_set(
    e_obs: &PiecewiseQuadratic,
    e_other: &PiecewiseQuadratic,
    wins_ties: bool,
) -> TruncationRegion {
    let knots = merged_knots([e_obs, e_other].into_iter());
    let mut out = Vec::new();
    for w in knots.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let (p, q) = (e_obs.piece_at(mid), e_other.piece_at(mid));
        let (a, b, c) = (p.c2 - q.c2, p.c1 - q.c1, p.c0 - q.c0);
        let mut cuts = vec![w[0]];
        cuts.extend(roots_in(a, b, c, w[0], w[1]));
        cuts.push(w[1]);
        for s in cuts.windows(2) {
            let m = 0.5 * (s[0] + s[1]);
            let (eo, ex) = (p.eval(m), q.eval(m));
            let diff = eo - ex;
            let tol = tie_tol(eo, ex);
            if diff < -tol || (diff.abs() <= tol && wins_ties) {
                out.push((s[0], s[1]));
            }
        }
    }
    TruncationRegion::new(out)
}

/// Real roots of `a z² + b z + c` strictly inside `(lo, hi)`, ascending.
fn roots_in(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    let mut roots = Vec::new();
    if a.abs() < QUAD_DEGENERATE * scale {
        if b.abs() >= QUAD_DEGENERATE * scale {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
        }
    }
    roots.retain(|r| *r > lo && *r < hi);
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

/// Mean `K`-fold validation error of `spec` (at its own `lambda`) for a fixed response.
pub fn cv_error(spec: &ProblemSpec, split: &FoldSplit, y: &DVector<f64>) -> Result<f64> {
    let x = spec.design().x();
    let mut total = 0.0;
    for f in 0..split.k() {
        let (train, val) = split.fold(f);
        let train_spec = spec.with_design(spec.design().subset_rows(train)?)?;
        let beta = fit(&train_spec, &linalg::select_entries(y, train))?.beta;
        let resid = linalg::select_entries(y, val) - linalg::select_rows(x, val) * beta;
        total += 0.5 * resid.norm_squared();
    }
    Ok(total / split.k() as f64)
}

/// Runs the CV selection on `y` and returns the index of the chosen `lambda`.
pub fn cv_select(
    spec: &ProblemSpec,
    lambdas: &[f64],
    split: &FoldSplit,
    y: &DVector<f64>,
) -> Result<usize> {
    if lambdas.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    let errors = lambdas
        .iter()
        .map(|&l| cv_error(&spec.with_lambda(l)?, split, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(select_lambda(lambdas, &errors))
}

/// Regions for one test direction under CV selection.
#[derive(Debug, Clone)]
pub struct CvRegions {
    pub line: LineParam,
    /// Full-data path at the selected `lambda`.
    pub full_path: SolutionPath,
    pub z1: TruncationRegion,
    pub z2: TruncationRegion,
    /// Every `(lambda, fold)` training path, `lambda`-major.
    pub fold_paths: Vec<SolutionPath>,
}

/// Mean validation curve of every candidate along the line `(a, b)`.
#[allow(clippy::too_many_arguments)]
pub fn cv_regions(
    spec_obs: &ProblemSpec,
    lambdas: &[f64],
    split: &FoldSplit,
    y_obs: &DVector<f64>,
    cov: &Covariance,
    eta: &DVector<f64>,
    target: &crate::problems::ActiveSet,
    policy: ZRangePolicy,
) -> Result<CvRegions> {
    let line = line_params(eta, cov, y_obs)?;
    let range = policy.range(&line);
    let (_, full_path) = coefficient_path(spec_obs, &line.a, &line.b, range)?;
    let z1 = truncation_region(&full_path, spec_obs, target);
    let x = spec_obs.design().x();
    let mut curves = Vec::with_capacity(lambdas.len());
    let mut fold_paths = Vec::new();
    for &lambda in lambdas {
        let spec_l = spec_obs.with_lambda(lambda)?;
        let mut fold_curves = Vec::with_capacity(split.k());
        for f in 0..split.k() {
            let (train, val) = split.fold(f);
            let train_spec = spec_l.with_design(spec_l.design().subset_rows(train)?)?;
            let a_t = linalg::select_entries(&line.a, train);
            let b_t = linalg::select_entries(&line.b, train);
            let (cpath, path) = coefficient_path(&train_spec, &a_t, &b_t, range)?;
            fold_curves.push(validation_error_curve(
                &cpath,
                &linalg::select_rows(x, val),
                &linalg::select_entries(&line.a, val),
                &linalg::select_entries(&line.b, val),
            ));
            fold_paths.push(path);
        }
        curves.push((lambda, kfold_mean_error(&fold_curves)?));
    }
    let z2 = z2_region(&curves, spec_obs.lambda())?;
    Ok(CvRegions {
        line,
        full_path,
        z1,
        z2,
        fold_paths,
    })
}

#[derive(Debug, Clone)]
pub struct CvInference {
    pub lambda_obs: f64,
    pub split: FoldSplit,
    pub results: Vec<InferenceResult>,
}

/// Selective inference conditioning on both the selected model and the CV choice of
/// `lambda`. `spec`'s own `lambda` is ignored.
#[allow(clippy::too_many_arguments)]
pub fn si_with_kfold_cv(
    spec: &ProblemSpec,
    lambdas: &[f64],
    y_obs: &DVector<f64>,
    cov: &Covariance,
    k: usize,
    alpha: f64,
    seed: u64,
    policy: ZRangePolicy,
) -> Result<CvInference> {
    let split = FoldSplit::new(spec.n(), k, seed)?;
    let chosen = cv_select(spec, lambdas, &split, y_obs)?;
    let lambda_obs = lambdas[chosen];
    let spec_obs = spec.with_lambda(lambda_obs)?;
    let observed = fit(&spec_obs, y_obs)?;
    let m = observed.active.len();
    let results = observed
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
            let z_cv = regions.z1.intersect(&regions.z2);
            summarize(j, &regions.line, z_cv, regions.full_path.len(), alpha, m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvInference {
        lambda_obs,
        split,
        results,
    })
}
