//! Monte Carlo drivers for the false/true positive rate, interval and CV experiments.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use ppsi_core::baselines::{data_split_inference, over_conditioned_cv_si, over_conditioned_si};
use ppsi_core::cv_event::si_with_kfold_cv;
use ppsi_core::inference::{
    eta_for, fit, run_parametric_si, Covariance, InferenceResult, ZRangePolicy,
};
use ppsi_core::problems::ProblemSpec;

use crate::config::{ExperimentConfig, ExperimentKind, Method, Problem, SigmaPolicy};
use crate::data::{
    derive_seed, estimate_sigma_full_model, fused_mean, fused_true_changepoints, gen_regression,
    rng, sample_variance,
};
use crate::error::Result;

/// Fraction of the rows used for selection by data splitting.
pub const DS_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub metric: String,
    pub x: f64,
    pub value: f64,
    pub stderr: f64,
    pub meta: BTreeMap<String, String>,
}

/// One synthetic data set with its ground truth.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub spec: ProblemSpec,
    pub y: DVector<f64>,
    pub mu: DVector<f64>,
    pub cov: Covariance,
    /// Penalty rows (fused) or features that are truly nonzero.
    pub truth: Vec<usize>,
}

/// Per-trial tallies for one method.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub tested: usize,
    pub rejected: usize,
    pub detected_true: usize,
    pub rejected_true: usize,
    /// `(lo, hi, eta' mu)` per tested component; the target is NaN when unknown.
    pub intervals: Vec<(f64, f64, f64)>,
    pub failed: bool,
}

/// Draws the data for one trial at x-axis value `x`.
pub fn make_trial(cfg: &ExperimentConfig, x: f64, seed: u64) -> Result<TrialData> {
    let n = if cfg.x_is_n() { x as usize } else { cfg.n };
    let mut r = rng(seed);
    let noise = cfg.noise;
    let (spec, y, mu, truth) = if cfg.problem == Problem::Fused {
        let delta_mu = if cfg.x_is_n() { cfg.signal } else { x };
        let mu = fused_mean(n, delta_mu);
        let y = &mu + noise.sample(&mut r, n);
        let truth = if delta_mu == 0.0 {
            Vec::new()
        } else {
            fused_true_changepoints(n)
        };
        (cfg.spec_for(n, &DMatrix::identity(n, n))?, y, mu, truth)
    } else {
        let beta = cfg.beta();
        let (xm, y) = gen_regression(n, &beta, noise, seed)?;
        let mu = &xm * &beta;
        let truth = (0..cfg.p).filter(|&j| beta[j] != 0.0).collect();
        (cfg.spec_for(n, &xm)?, y, mu, truth)
    };
    let sigma2 = match cfg.sigma {
        SigmaPolicy::Known(s) => s,
        SigmaPolicy::EstimatedFullModel if cfg.problem == Problem::Fused => sample_variance(&y)?,
        SigmaPolicy::EstimatedFullModel => estimate_sigma_full_model(spec.design().x(), &y)?,
    };
    Ok(TrialData {
        spec,
        y,
        mu,
        cov: Covariance::Isotropic(sigma2),
        truth,
    })
}

fn is_correct(cfg: &ExperimentConfig, truth: &[usize], j: usize) -> bool {
    if cfg.problem == Problem::Fused {
        truth.iter().any(|&t| t.abs_diff(j) <= cfg.cp_tolerance)
    } else {
        truth.contains(&j)
    }
}

fn tally(
    cfg: &ExperimentConfig,
    data: &TrialData,
    results: &[InferenceResult],
    targets: &[f64],
) -> Outcome {
    let mut out = Outcome {
        tested: results.len(),
        ..Outcome::default()
    };
    for (r, &target) in results.iter().zip(targets) {
        let correct = is_correct(cfg, &data.truth, r.j);
        out.rejected += r.significant as usize;
        out.detected_true += correct as usize;
        out.rejected_true += (correct && r.significant) as usize;
        out.intervals.push((r.ci.0, r.ci.1, target));
    }
    out
}

/// `eta' mu` for each result, using the observed model's test directions.
fn targets(data: &TrialData, spec: &ProblemSpec, results: &[InferenceResult]) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Ok(Vec::new());
    }
    let active = fit(spec, &data.y)?.active;
    results
        .iter()
        .map(|r| Ok(eta_for(spec, &active, r.j)?.eta.dot(&data.mu)))
        .collect()
}

/// Runs `method` on one trial.
pub fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    data: &TrialData,
    seed: u64,
) -> Result<Outcome> {
    let policy = ZRangePolicy::default();
    let (spec, y, cov, alpha) = (&data.spec, &data.y, &data.cov, cfg.alpha);
    if cfg.experiment == ExperimentKind::CvCompare {
        let results = match method {
            Method::Parametric => {
                si_with_kfold_cv(spec, &cfg.lambdas, y, cov, cfg.folds, alpha, seed, policy)?
                    .results
            }
            Method::OverConditioned => {
                over_conditioned_cv_si(spec, &cfg.lambdas, y, cov, cfg.folds, alpha, seed, policy)?
            }
            Method::DataSplit => {
                return Err(crate::error::HarnessError::input(
                    "data splitting is not part of the CV comparison",
                ))
            }
        };
        let nan = vec![f64::NAN; results.len()];
        return Ok(tally(cfg, data, &results, &nan));
    }
    match method {
        Method::Parametric | Method::OverConditioned => {
            let results = if method == Method::Parametric {
                run_parametric_si(spec, y, cov, alpha, policy)?
            } else {
                over_conditioned_si(spec, y, cov, alpha, policy)?
            };
            let t = targets(data, spec, &results)?;
            Ok(tally(cfg, data, &results, &t))
        }
        Method::DataSplit => {
            match data_split_inference(spec, y, cov, DS_FRACTION, derive_seed(&[seed, 1]), alpha) {
                Ok(results) => {
                    let nan = vec![f64::NAN; results.len()];
                    Ok(tally(cfg, data, &results, &nan))
                }
                Err(ppsi_core::Error::EmptySelection) => Ok(Outcome::default()),
                Err(e) => Err(e.into()),
            }
        }
    }
}

/// Every method's outcome on one trial; numerical failures are marked, not raised.
pub fn run_trial(
    cfg: &ExperimentConfig,
    x_index: usize,
    rep: usize,
    trial: usize,
) -> Result<Vec<Outcome>> {
    let seed = derive_seed(&[cfg.seed, x_index as u64, rep as u64, trial as u64]);
    let data = make_trial(cfg, cfg.xs[x_index], seed)?;
    cfg.methods
        .iter()
        .map(|&m| match run_method(cfg, m, &data, seed) {
            Ok(o) => Ok(o),
            Err(e) if e.exit_code() == 3 => Ok(Outcome {
                failed: true,
                ..Outcome::default()
            }),
            Err(e) => Err(e),
        })
        .collect()
}

/// Per-repetition `(numerator, denominator)` for a metric.
type Ratio = (f64, f64);

fn metric_ratios(cfg: &ExperimentConfig, outcomes: &[&Outcome]) -> Vec<(&'static str, Ratio)> {
    let ok: Vec<&&Outcome> = outcomes.iter().filter(|o| !o.failed).collect();
    let sum = |f: &dyn Fn(&Outcome) -> f64| ok.iter().map(|o| f(o)).sum::<f64>();
    let fpr = (
        sum(&|o| (o.rejected > 0) as usize as f64),
        sum(&|o| (o.tested > 0) as usize as f64),
    );
    let tpr = (
        sum(&|o| o.rejected_true as f64),
        sum(&|o| o.detected_true as f64),
    );
    let lengths: Vec<f64> = ok
        .iter()
        .flat_map(|o| o.intervals.iter().map(|i| i.1 - i.0))
        .collect();
    // Unbounded intervals are common for conditioned methods, so the median is reported.
    let ci_len = match median(lengths.clone()) {
        Some(m) => (m, 1.0),
        None => (0.0, 0.0),
    };
    let unbounded = (
        lengths.iter().filter(|l| l.is_infinite()).count() as f64,
        lengths.len() as f64,
    );
    let known: Vec<&(f64, f64, f64)> = ok
        .iter()
        .flat_map(|o| o.intervals.iter())
        .filter(|i| !i.2.is_nan())
        .collect();
    let coverage = (
        known.iter().filter(|i| i.0 <= i.2 && i.2 <= i.1).count() as f64,
        known.len() as f64,
    );
    match cfg.experiment {
        ExperimentKind::Fpr | ExperimentKind::Robustness => vec![("fpr", fpr)],
        ExperimentKind::Tpr | ExperimentKind::CvCompare => vec![("tpr", tpr)],
        ExperimentKind::Coverage => vec![
            ("coverage", coverage),
            ("ci_length", ci_len),
            ("ci_unbounded", unbounded),
        ],
        ExperimentKind::CiLength => vec![("ci_length", ci_len), ("ci_unbounded", unbounded)],
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Runs the configured experiment and returns rows sorted by metric, method and x.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (xi, &x) in cfg.xs.iter().enumerate() {
        // [rep][trial][method]
        let mut per_rep = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions {
            let trials = (0..cfg.trials)
                .into_par_iter()
                .map(|t| run_trial(cfg, xi, rep, t))
                .collect::<Result<Vec<_>>>()?;
            per_rep.push(trials);
        }
        for (mi, method) in cfg.methods.iter().enumerate() {
            let mut by_metric: BTreeMap<&str, Vec<Ratio>> = BTreeMap::new();
            let mut failures = 0;
            for trials in &per_rep {
                let outcomes: Vec<&Outcome> = trials.iter().map(|t| &t[mi]).collect();
                failures += outcomes.iter().filter(|o| o.failed).count();
                for (name, ratio) in metric_ratios(cfg, &outcomes) {
                    by_metric.entry(name).or_default().push(ratio);
                }
            }
            for (name, ratios) in by_metric {
                let per: Vec<f64> = ratios
                    .iter()
                    .filter(|r| r.1 > 0.0)
                    .map(|r| r.0 / r.1)
                    .collect();
                let (value, stderr) = if per.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_stderr(&per)
                };
                let num: f64 = ratios.iter().map(|r| r.0).sum();
                let den: f64 = ratios.iter().map(|r| r.1).sum();
                let mut meta = BTreeMap::new();
                meta.insert("problem".into(), cfg.problem.to_string());
                meta.insert("experiment".into(), cfg.experiment.to_string());
                meta.insert("numerator".into(), num.to_string());
                meta.insert("denominator".into(), den.to_string());
                meta.insert("failures".into(), failures.to_string());
                meta.insert("trials".into(), cfg.trials.to_string());
                meta.insert("repetitions".into(), cfg.repetitions.to_string());
                meta.insert("noise".into(), cfg.noise.name().into());
                meta.insert(
                    "sigma".into(),
                    match cfg.sigma {
                        SigmaPolicy::Known(s) => format!("known:{s}"),
                        SigmaPolicy::EstimatedFullModel => "estimated".into(),
                    },
                );
                rows.push(ResultRow {
                    method: method.to_string(),
                    metric: name.to_string(),
                    x,
                    value,
                    stderr,
                    meta,
                });
            }
        }
    }
    rows.sort_by(|a, b| {
        a.metric
            .cmp(&b.metric)
            .then_with(|| a.method.cmp(&b.method))
            .then_with(|| a.x.total_cmp(&b.x))
    });
    Ok(rows)
}
