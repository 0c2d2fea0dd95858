//! `ppsi` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use ppsi_core::baselines::{over_conditioned_cv_si, run_baseline, BaselineKind};
use ppsi_core::cv_event::si_with_kfold_cv;
use ppsi_core::inference::{
    eta_for, fit, run_parametric_si, trace_direction, Covariance, ZRangePolicy,
};
use ppsi_core::problems::{make_penalty, DesignMatrix, PenaltyKind, ProblemSpec};

use crate::config::ExperimentConfig;
use crate::data::{estimate_sigma_full_model, sample_variance};
use crate::error::{HarnessError, Result};
use crate::experiments::{run_experiment, DS_FRACTION};
use crate::io::{self, JsonReport, JsonResult};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "PPSI_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "ppsi",
    version,
    about = "Selective inference along solution paths"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tests every selected component at a fixed lambda.
    Infer(InferArgs),
    /// Tests the components selected after choosing lambda by K-fold cross-validation.
    CvInfer(CvInferArgs),
    /// Writes the solution path along one test direction as CSV.
    Path(PathArgs),
    /// Runs a Monte Carlo experiment from a key = value config file.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemArg {
    Genlasso,
    Lasso,
    Enet,
    Nnls,
    Huber,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    Identity,
    Fused,
    Trend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Parametric,
    Oc,
    Ds,
    FullTarget,
    TnL1,
    TnCustom,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    #[arg(long, value_enum)]
    pub problem: ProblemArg,
    /// Penalty matrix for `genlasso`.
    #[arg(long, value_enum, default_value = "identity")]
    pub penalty: PenaltyArg,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub zeta: f64,
    #[arg(long, default_value_t = 1.345)]
    pub delta: f64,
    /// Design CSV; omitted means `X = I` (generalized lasso only).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Response CSV with a single column.
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, conflicts_with = "estimate_sigma")]
    pub sigma2: Option<f64>,
    /// Estimate the noise variance from the full least-squares fit.
    #[arg(long)]
    pub estimate_sigma: bool,
}

#[derive(Debug, Clone, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "parametric")]
    pub method: MethodArg,
    /// Larger lambda defining the stable set of `tn-l1`.
    #[arg(long)]
    pub lambda_high: Option<f64>,
    /// Refit cutoff defining the stable set of `tn-custom`.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Seed of the random split for `ds`.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CvInferArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Comma-separated candidate grid.
    #[arg(long)]
    pub lambdas: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// `parametric` or `oc`.
    #[arg(long, value_enum, default_value = "parametric")]
    pub method: MethodArg,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Component whose test direction is traced; the first selected one by default.
    #[arg(long, conflicts_with = "eta")]
    pub j: Option<usize>,
    /// Direction CSV with a single column, instead of a selected component.
    #[arg(long)]
    pub eta: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the trial count (for example the full-size robustness runs).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads; defaults to the environment variable, then to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

fn build_spec(args: &ProblemArgs, x: Option<DMatrix<f64>>, n: usize) -> Result<ProblemSpec> {
    let design = match x {
        Some(x) => {
            if x.nrows() != n {
                return Err(HarnessError::input(format!(
                    "X has {} rows but y has {n}",
                    x.nrows()
                )));
            }
            DesignMatrix::new(x)?
        }
        None if args.problem == ProblemArg::Genlasso => DesignMatrix::identity(n),
        None => return Err(HarnessError::input("--x is required for this problem")),
    };
    Ok(match args.problem {
        ProblemArg::Genlasso => {
            let kind = match args.penalty {
                PenaltyArg::Identity => PenaltyKind::Identity,
                PenaltyArg::Fused => PenaltyKind::FusedLasso,
                PenaltyArg::Trend => PenaltyKind::TrendFilter,
            };
            let pen = make_penalty(kind, design.p())?;
            ProblemSpec::generalized_lasso(design, pen, args.lambda)?
        }
        ProblemArg::Lasso => ProblemSpec::vanilla_lasso(design, args.lambda)?,
        ProblemArg::Enet => ProblemSpec::elastic_net(design, args.lambda, args.zeta)?,
        ProblemArg::Nnls => ProblemSpec::nnls(design)?,
        ProblemArg::Huber => ProblemSpec::huber_l1(design, args.lambda, args.delta)?,
    })
}

/// Reads the inputs and builds the problem and noise covariance.
fn load(args: &ProblemArgs) -> Result<(ProblemSpec, DVector<f64>, f64)> {
    let y = io::read_vector_csv(&args.y)?;
    let x = args.x.as_deref().map(io::read_matrix_csv).transpose()?;
    let spec = build_spec(args, x, y.len())?;
    let sigma2 = match (args.sigma2, args.estimate_sigma) {
        (Some(s), _) if !(s > 0.0 && s.is_finite()) => {
            return Err(HarnessError::input(format!(
                "--sigma2 must be positive, got {s}"
            )))
        }
        (Some(s), _) => s,
        (None, true) if args.x.is_none() => sample_variance(&y)?,
        (None, true) => estimate_sigma_full_model(spec.design().x(), &y)?,
        (None, false) => return Err(HarnessError::input("give --sigma2 or --estimate-sigma")),
    };
    Ok((spec, y, sigma2))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(HarnessError::input(format!(
            "--alpha must be in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

/// Writes `text` to `path`, or to standard output.
fn emit(path: Option<&PathBuf>, text: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| HarnessError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .write_all(text)
            .map_err(|source| HarnessError::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Parametric => "parametric",
        MethodArg::Oc => "oc",
        MethodArg::Ds => "ds",
        MethodArg::FullTarget => "full-target",
        MethodArg::TnL1 => "tn-l1",
        MethodArg::TnCustom => "tn-custom",
    }
}

fn problem_name(p: ProblemArg) -> &'static str {
    match p {
        ProblemArg::Genlasso => "genlasso",
        ProblemArg::Lasso => "lasso",
        ProblemArg::Enet => "enet",
        ProblemArg::Nnls => "nnls",
        ProblemArg::Huber => "huber",
    }
}

pub fn infer(args: &InferArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    let (spec, y, sigma2) = load(&args.problem)?;
    let cov = Covariance::Isotropic(sigma2);
    let policy = ZRangePolicy::default();
    let results = match args.method {
        MethodArg::Parametric => run_parametric_si(&spec, &y, &cov, args.alpha, policy)?,
        m => {
            let kind = match m {
                MethodArg::Oc => BaselineKind::OverConditioned,
                MethodArg::Ds => BaselineKind::DataSplit {
                    fraction: DS_FRACTION,
                    seed: args.seed,
                },
                MethodArg::FullTarget => BaselineKind::FullTarget,
                MethodArg::TnL1 => BaselineKind::StablePartialL1 {
                    lambda_high: args
                        .lambda_high
                        .ok_or_else(|| HarnessError::input("tn-l1 needs --lambda-high"))?,
                },
                MethodArg::TnCustom => BaselineKind::StablePartialCustom {
                    cutoff: args
                        .cutoff
                        .ok_or_else(|| HarnessError::input("tn-custom needs --cutoff"))?,
                },
                MethodArg::Parametric => unreachable!(),
            };
            run_baseline(kind, &spec, &y, &cov, args.alpha, policy)?
        }
    };
    let report = JsonReport {
        schema: io::JSON_SCHEMA,
        problem: problem_name(args.problem.problem).into(),
        method: method_name(args.method).into(),
        lambda: spec.lambda(),
        alpha: args.alpha,
        sigma2,
        lambda_selected: None,
        results: results.iter().map(JsonResult::from_result).collect(),
    };
    emit(args.json.as_ref(), io::to_json(&report).as_bytes())
}

pub fn cv_infer(args: &CvInferArgs) -> Result<()> {
    check_alpha(args.alpha)?;
    let lambdas = crate::config::parse_list("--lambdas", &args.lambdas)?;
    let (spec, y, sigma2) = load(&args.problem)?;
    let cov = Covariance::Isotropic(sigma2);
    let policy = ZRangePolicy::default();
    let (results, lambda_obs) = match args.method {
        MethodArg::Parametric => {
            let cv = si_with_kfold_cv(
                &spec, &lambdas, &y, &cov, args.folds, args.alpha, args.seed, policy,
            )?;
            (cv.results, cv.lambda_obs)
        }
        MethodArg::Oc => {
            let split = ppsi_core::cv_event::FoldSplit::new(spec.n(), args.folds, args.seed)?;
            let chosen = ppsi_core::cv_event::cv_select(&spec, &lambdas, &split, &y)?;
            let r = over_conditioned_cv_si(
                &spec, &lambdas, &y, &cov, args.folds, args.alpha, args.seed, policy,
            )?;
            (r, lambdas[chosen])
        }
        other => {
            return Err(HarnessError::input(format!(
                "cv-infer supports parametric and oc, not {}",
                method_name(other)
            )))
        }
    };
    let report = JsonReport {
        schema: io::JSON_SCHEMA,
        problem: problem_name(args.problem.problem).into(),
        method: method_name(args.method).into(),
        lambda: lambda_obs,
        alpha: args.alpha,
        sigma2,
        lambda_selected: Some(lambda_obs),
        results: results.iter().map(JsonResult::from_result).collect(),
    };
    emit(args.json.as_ref(), io::to_json(&report).as_bytes())
}

pub fn path(args: &PathArgs) -> Result<()> {
    let (spec, y, sigma2) = load(&args.problem)?;
    let eta = match &args.eta {
        Some(p) => io::read_vector_csv(p)?,
        None => {
            let active = fit(&spec, &y)?.active;
            let j = match args.j {
                Some(j) => j,
                None => *active
                    .indices
                    .first()
                    .ok_or_else(|| HarnessError::input("nothing is selected; pass --eta"))?,
            };
            eta_for(&spec, &active, j)?.eta
        }
    };
    let traced = trace_direction(
        &spec,
        &y,
        &Covariance::Isotropic(sigma2),
        &eta,
        ZRangePolicy::default(),
    )?;
    let mut buf = Vec::new();
    io::write_path_csv(&traced.path, &spec, &mut buf)?;
    emit(args.out.as_ref(), &buf)
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| HarnessError::Io {
        path: args.config.display().to_string(),
        source,
    })?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    cfg.validate()?;
    let threads = match args.threads {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                HarnessError::input(format!("{THREADS_ENV} must be a thread count, got '{v}'"))
            })?),
            Err(_) => None,
        },
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| HarnessError::input(format!("thread pool: {e}")))?;
    let rows = pool.install(|| run_experiment(&cfg))?;
    let mut buf = Vec::new();
    io::write_results_csv(&rows, &mut buf)?;
    emit(args.out.as_ref(), &buf)
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Infer(a) => infer(a),
        Command::CvInfer(a) => cv_infer(a),
        Command::Path(a) => path(a),
        Command::Experiment(a) => experiment(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
