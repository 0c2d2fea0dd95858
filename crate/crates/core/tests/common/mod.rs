#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ppsi_core::problems::{make_penalty, DesignMatrix, PenaltyKind, ProblemSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

pub fn gaussian_mat(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn soft(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Coordinate descent for `scale/2 ‖y - Xb‖² + lam ‖b‖₁ + ridge/2 ‖b‖²`, optionally with
/// `b >= 0`.
pub fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    scale: f64,
    lam: f64,
    ridge: f64,
    nonneg: bool,
) -> DVector<f64> {
    let p = x.ncols();
    let mut beta: DVector<f64> = DVector::zeros(p);
    let mut resid = y.clone();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    for _ in 0..200_000 {
        let mut max_step: f64 = 0.0;
        for j in 0..p {
            let denom = scale * col_sq[j] + ridge;
            if denom == 0.0 {
                continue;
            }
            let rho = scale * (x.column(j).dot(&resid) + col_sq[j] * beta[j]);
            let mut new = soft(rho, lam) / denom;
            if nonneg {
                new = new.max(0.0);
            }
            let delta = new - beta[j];
            if delta != 0.0 {
                resid.axpy(-delta, &x.column(j), 1.0);
                beta[j] = new;
                max_step = max_step.max(delta.abs());
            }
        }
        if max_step < 1e-14 {
            break;
        }
    }
    beta
}

/// ADMM for `½‖y - Xb‖² + lam ‖D b‖₁`.
pub fn admm_genlasso(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    lam: f64,
) -> DVector<f64> {
    let rho = 1.0;
    let lhs = x.transpose() * x + d.transpose() * d * rho;
    let chol = lhs
        .cholesky()
        .expect("X'X + rho D'D must be positive definite");
    let xty = x.transpose() * y;
    let m = d.nrows();
    let mut zv = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    let mut beta = DVector::zeros(x.ncols());
    for _ in 0..200_000 {
        beta = chol.solve(&(&xty + d.transpose() * (&zv - &u) * rho));
        let db = d * &beta;
        let z_old = zv.clone();
        zv = (&db + &u).map(|v| soft(v, lam / rho));
        u += &db - &zv;
        let primal = (&db - &zv).amax();
        let dual = (&zv - &z_old).amax();
        if primal < 1e-12 && dual < 1e-12 {
            break;
        }
    }
    beta
}

/// FISTA for `Σ huber_delta(y - Xb) + lam ‖b‖₁`.
pub fn fista_huber(x: &DMatrix<f64>, y: &DVector<f64>, lam: f64, delta: f64) -> DVector<f64> {
    let lip = x.transpose() * x;
    let l = lip.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / l;
    let p = x.ncols();
    let grad = |b: &DVector<f64>| -> DVector<f64> {
        let r = y - x * b;
        let psi = r.map(|e| e.clamp(-delta, delta));
        -(x.transpose() * psi)
    };
    let mut beta: DVector<f64> = DVector::zeros(p);
    let mut v = beta.clone();
    let mut t: f64 = 1.0;
    for _ in 0..400_000 {
        let g = grad(&v);
        let next = (&v - g * step).map(|c| soft(c, lam * step));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let diff = &next - &beta;
        v = &next + &diff * ((t - 1.0) / t_next);
        let moved = diff.amax();
        beta = next;
        t = t_next;
        if moved < 1e-14 {
            break;
        }
    }
    beta
}

/// Weighted least-squares iterations for the unpenalised Huber fit.
pub fn irls_huber(x: &DMatrix<f64>, y: &DVector<f64>, delta: f64) -> DVector<f64> {
    let mut beta = (x.transpose() * x)
        .cholesky()
        .unwrap()
        .solve(&(x.transpose() * y));
    for _ in 0..500 {
        let r = y - x * &beta;
        let w = r.map(|e| {
            if e.abs() <= delta {
                1.0
            } else {
                delta / e.abs()
            }
        });
        let xw = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] * w[i]);
        let next = (x.transpose() * &xw)
            .cholesky()
            .unwrap()
            .solve(&(xw.transpose() * y));
        if (&next - &beta).amax() < 1e-14 {
            return next;
        }
        beta = next;
    }
    beta
}

/// Independent reference minimiser for any supported estimator, returning `beta`.
pub fn reference_beta(spec: &ProblemSpec, y: &DVector<f64>) -> DVector<f64> {
    use ppsi_core::problems::EstimatorKind::*;
    let x = spec.design().x();
    match spec.kind() {
        GeneralizedLasso => admm_genlasso(x, spec.penalty().d(), y, spec.lambda()),
        VanillaLasso => coordinate_descent(x, y, 1.0, spec.lambda(), 0.0, false),
        ElasticNet { zeta } => {
            coordinate_descent(x, y, 1.0 / spec.n() as f64, spec.lambda(), zeta, false)
        }
        Nnls => coordinate_descent(x, y, 1.0, 0.0, 0.0, true),
        HuberL1 { delta } => fista_huber(x, y, spec.lambda(), delta),
    }
}

pub const ESTIMATORS: [&str; 5] = ["fused", "lasso", "enet", "nnls", "huber"];

/// Random small instance of the named estimator with `n <= 30`, `p <= 8`.
pub fn random_instance(name: &str, rng: &mut ChaCha8Rng) -> (ProblemSpec, DVector<f64>) {
    let n = rng.random_range(8..=30);
    let p = rng.random_range(2..=8);
    match name {
        "fused" => {
            let n = rng.random_range(6..=20);
            let mu = DVector::from_fn(n, |i, _| if i >= n / 2 { 2.0 } else { 0.0 });
            let y = mu + gaussian_vec(rng, n);
            let lam = rng.random_range(0.3..2.0);
            (ProblemSpec::fused_lasso(n, lam).unwrap(), y)
        }
        "trend" => {
            let n = rng.random_range(6..=16);
            let y = gaussian_vec(rng, n);
            let pen = make_penalty(PenaltyKind::TrendFilter, n).unwrap();
            let spec = ProblemSpec::generalized_lasso(
                DesignMatrix::identity(n),
                pen,
                rng.random_range(0.3..2.0),
            );
            (spec.unwrap(), y)
        }
        _ => {
            let x = gaussian_mat(rng, n, p);
            let mut beta = DVector::zeros(p);
            beta[0] = 1.0;
            let y = &x * beta + gaussian_vec(rng, n);
            let design = DesignMatrix::new(x).unwrap();
            let lam = rng.random_range(0.5..4.0);
            let spec = match name {
                "lasso" => ProblemSpec::vanilla_lasso(design, lam),
                "enet" => {
                    ProblemSpec::elastic_net(design, lam / n as f64, rng.random_range(0.05..1.0))
                }
                "nnls" => ProblemSpec::nnls(design),
                "huber" => ProblemSpec::huber_l1(design, lam, rng.random_range(0.5..2.0)),
                other => panic!("unknown estimator {other}"),
            };
            (spec.unwrap(), y)
        }
    }
}

/// Simpson's rule for `∫ f` on `[lo, hi]` with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

/// Kolmogorov-Smirnov statistic of `samples` against Uniform(0, 1).
pub fn ks_uniform(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}
