//! Experiment configuration in a `key = value` text format.
//!
//! ```text
//! # fused-lasso false positive rate
//! experiment = fpr
//! problem = fused
//! xs = 70, 80, 90, 100
//! trials = 100
//! repetitions = 10
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use ppsi_core::problems::{DesignMatrix, ProblemSpec};

use crate::data::{sparse_beta, NoiseKind};
use crate::error::{HarnessError, Result};

/// Largest accepted number of features.
pub const MAX_P: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Fpr,
    Tpr,
    Coverage,
    CiLength,
    Robustness,
    CvCompare,
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "fpr" => ExperimentKind::Fpr,
            "tpr" => ExperimentKind::Tpr,
            "coverage" => ExperimentKind::Coverage,
            "ci_length" | "cilength" => ExperimentKind::CiLength,
            "robustness" => ExperimentKind::Robustness,
            "cv_compare" | "cvcompare" => ExperimentKind::CvCompare,
            other => return Err(HarnessError::input(format!("unknown experiment '{other}'"))),
        })
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExperimentKind::Fpr => "fpr",
            ExperimentKind::Tpr => "tpr",
            ExperimentKind::Coverage => "coverage",
            ExperimentKind::CiLength => "ci_length",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::CvCompare => "cv_compare",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Fused,
    Lasso,
    ElasticNet,
    Nnls,
    Huber,
}

impl FromStr for Problem {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "fused" | "fused_lasso" => Problem::Fused,
            "lasso" => Problem::Lasso,
            "enet" | "elastic_net" => Problem::ElasticNet,
            "nnls" => Problem::Nnls,
            "huber" => Problem::Huber,
            other => return Err(HarnessError::input(format!("unknown problem '{other}'"))),
        })
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Problem::Fused => "fused",
            Problem::Lasso => "lasso",
            Problem::ElasticNet => "enet",
            Problem::Nnls => "nnls",
            Problem::Huber => "huber",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Parametric,
    OverConditioned,
    DataSplit,
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "parametric" => Method::Parametric,
            "oc" => Method::OverConditioned,
            "ds" => Method::DataSplit,
            other => return Err(HarnessError::input(format!("unknown method '{other}'"))),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Parametric => "parametric",
            Method::OverConditioned => "oc",
            Method::DataSplit => "ds",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaPolicy {
    Known(f64),
    EstimatedFullModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub problem: Problem,
    /// Values on the x axis: `n`, or `delta_mu` for the fused-lasso TPR.
    pub xs: Vec<f64>,
    pub trials: usize,
    pub repetitions: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub delta: f64,
    pub p: usize,
    /// Fixed `n` when `xs` holds signal levels.
    pub n: usize,
    /// Size of each nonzero `beta` entry.
    pub signal: f64,
    /// Number of nonzero leading `beta` entries.
    pub n_signal: usize,
    pub noise: NoiseKind,
    pub sigma: SigmaPolicy,
    pub methods: Vec<Method>,
    /// Candidate grid for the CV comparison.
    pub lambdas: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Change-point detections within this many positions of a true one count as correct.
    pub cp_tolerance: usize,
}

impl ExperimentConfig {
    /// Defaults for `experiment` on `problem`.
    pub fn preset(experiment: ExperimentKind, problem: Problem) -> Self {
        let fused = problem == Problem::Fused;
        let xs: Vec<f64> = match (experiment, fused) {
            (ExperimentKind::Fpr, true) => vec![70.0, 80.0, 90.0, 100.0],
            (ExperimentKind::Tpr, true) => vec![1.0, 2.0, 3.0, 4.0],
            (ExperimentKind::Coverage | ExperimentKind::CiLength, true) => vec![2.0],
            (ExperimentKind::Coverage | ExperimentKind::CiLength, false) => vec![100.0],
            (ExperimentKind::CvCompare, _) => vec![100.0],
            _ => vec![50.0, 100.0, 150.0, 200.0],
        };
        let (trials, repetitions) = match experiment {
            ExperimentKind::Fpr | ExperimentKind::Tpr | ExperimentKind::CvCompare => (100, 10),
            ExperimentKind::Coverage | ExperimentKind::CiLength => (100, 1),
            ExperimentKind::Robustness => (300, 1),
        };
        let signal = match experiment {
            ExperimentKind::Tpr
            | ExperimentKind::Coverage
            | ExperimentKind::CiLength
            | ExperimentKind::CvCompare => 0.25,
            _ => 0.0,
        };
        let lambda = if experiment == ExperimentKind::Robustness {
            0.5
        } else {
            1.0
        };
        let methods = match experiment {
            ExperimentKind::Robustness => vec![Method::Parametric],
            ExperimentKind::Coverage | ExperimentKind::CvCompare => {
                vec![Method::Parametric, Method::OverConditioned]
            }
            _ if problem == Problem::Fused => vec![Method::Parametric, Method::OverConditioned],
            _ => vec![
                Method::Parametric,
                Method::OverConditioned,
                Method::DataSplit,
            ],
        };
        ExperimentConfig {
            experiment,
            problem,
            xs,
            trials,
            repetitions,
            alpha: 0.05,
            lambda,
            zeta: 0.1,
            delta: 1.345,
            p: 5,
            n: 60,
            signal,
            n_signal: 2,
            noise: NoiseKind::Gaussian,
            sigma: SigmaPolicy::Known(1.0),
            methods,
            lambdas: vec![0.5, 1.0, 2.0],
            folds: 5,
            seed: 1,
            cp_tolerance: 2,
        }
    }

    /// Parses `key = value` lines; `#` starts a comment. `experiment` and `problem` pick
    /// the preset that the remaining keys override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                HarnessError::input(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = k.trim().to_ascii_lowercase();
            if pairs.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(HarnessError::input(format!(
                    "line {}: duplicate key '{key}'",
                    lineno + 1
                )));
            }
        }
        let experiment: ExperimentKind = pairs
            .remove("experiment")
            .ok_or_else(|| HarnessError::input("missing key 'experiment'"))?
            .parse()?;
        let problem: Problem = pairs
            .remove("problem")
            .ok_or_else(|| HarnessError::input("missing key 'problem'"))?
            .parse()?;
        let mut cfg = Self::preset(experiment, problem);
        let mut sigma2 = None;
        let mut estimate = false;
        for (key, value) in pairs {
            match key.as_str() {
                "xs" => cfg.xs = parse_list(&key, &value)?,
                "trials" => cfg.trials = parse_num(&key, &value)?,
                "repetitions" => cfg.repetitions = parse_num(&key, &value)?,
                "alpha" => cfg.alpha = parse_num(&key, &value)?,
                "lambda" => cfg.lambda = parse_num(&key, &value)?,
                "zeta" => cfg.zeta = parse_num(&key, &value)?,
                "delta" => cfg.delta = parse_num(&key, &value)?,
                "p" => cfg.p = parse_num(&key, &value)?,
                "n" => cfg.n = parse_num(&key, &value)?,
                "signal" => cfg.signal = parse_num(&key, &value)?,
                "n_signal" => cfg.n_signal = parse_num(&key, &value)?,
                "noise" => cfg.noise = value.parse()?,
                "sigma2" => sigma2 = Some(parse_num(&key, &value)?),
                "sigma" => {
                    estimate = match value.to_ascii_lowercase().as_str() {
                        "known" => false,
                        "estimated" => true,
                        other => {
                            return Err(HarnessError::input(format!(
                                "sigma must be 'known' or 'estimated', got '{other}'"
                            )))
                        }
                    }
                }
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .map(|m| m.parse())
                        .collect::<Result<Vec<_>>>()?
                }
                "lambdas" => cfg.lambdas = parse_list(&key, &value)?,
                "folds" => cfg.folds = parse_num(&key, &value)?,
                "seed" => cfg.seed = parse_num(&key, &value)?,
                "cp_tolerance" => cfg.cp_tolerance = parse_num(&key, &value)?,
                other => return Err(HarnessError::input(format!("unknown key '{other}'"))),
            }
        }
        cfg.sigma = match (estimate, sigma2) {
            (true, Some(_)) => {
                return Err(HarnessError::input(
                    "give either sigma = estimated or sigma2, not both",
                ))
            }
            (true, None) => SigmaPolicy::EstimatedFullModel,
            (false, s) => SigmaPolicy::Known(s.unwrap_or(1.0)),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HarnessError::Input(m));
        if self.trials == 0 || self.repetitions == 0 {
            return fail("trials and repetitions must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must be in (0, 1), got {}", self.alpha));
        }
        if self.xs.is_empty() || self.xs.iter().any(|x| !x.is_finite()) {
            return fail("xs must be a non-empty list of finite numbers".into());
        }
        if self.x_is_n() && self.xs.iter().any(|&x| x < 3.0 || x.fract() != 0.0) {
            return fail("xs are sample sizes here and must be integers >= 3".into());
        }
        if let SigmaPolicy::Known(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return fail(format!("sigma2 must be positive, got {s}"));
            }
        }
        if self.methods.is_empty() {
            return fail("at least one method is required".into());
        }
        if self.p > MAX_P {
            return fail(format!("p = {} exceeds the limit of {MAX_P}", self.p));
        }
        if self.problem != Problem::Fused && (self.p == 0 || self.n_signal > self.p) {
            return fail(format!(
                "need 1 <= p and n_signal <= p, got p = {}, n_signal = {}",
                self.p, self.n_signal
            ));
        }
        if self.experiment == ExperimentKind::CvCompare {
            if self.problem == Problem::Fused {
                return fail("the CV comparison runs on regression problems".into());
            }
            if self.lambdas.is_empty() || self.folds < 2 {
                return fail("the CV comparison needs lambdas and folds >= 2".into());
            }
        }
        if self.problem == Problem::Fused && self.methods.contains(&Method::DataSplit) {
            return fail("data splitting is only available for regression problems".into());
        }
        // Builds one spec so that bad lambda / zeta / delta values surface here.
        self.spec_for(4, &nalgebra::DMatrix::identity(4, self.p.max(1)))?;
        Ok(())
    }

    /// Whether `xs` holds sample sizes (otherwise signal levels at fixed `n`).
    pub fn x_is_n(&self) -> bool {
        !(self.problem == Problem::Fused
            && matches!(
                self.experiment,
                ExperimentKind::Tpr | ExperimentKind::Coverage | ExperimentKind::CiLength
            ))
    }

    pub fn beta(&self) -> DVector<f64> {
        sparse_beta(self.p, self.n_signal, self.signal)
    }

    /// The estimator for a data set with `n` rows and design `x` (ignored for fused).
    pub fn spec_for(&self, n: usize, x: &nalgebra::DMatrix<f64>) -> Result<ProblemSpec> {
        let design = || DesignMatrix::new(x.clone());
        Ok(match self.problem {
            Problem::Fused => ProblemSpec::fused_lasso(n, self.lambda)?,
            Problem::Lasso => ProblemSpec::vanilla_lasso(design()?, self.lambda)?,
            Problem::ElasticNet => {
                ProblemSpec::elastic_net(design()?, self.lambda / n as f64, self.zeta)?
            }
            Problem::Nnls => ProblemSpec::nnls(design()?)?,
            Problem::Huber => ProblemSpec::huber_l1(design()?, self.lambda, self.delta)?,
        })
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| HarnessError::input(format!("{key}: cannot parse '{value}'")))
}

pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_num(key, v)).collect()
}
