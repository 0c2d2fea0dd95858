//! Synthetic data for the experiments and the noise-level estimate.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, SkewNormal, StandardNormal, StudentT};

use crate::error::{HarnessError, Result};

/// Shape parameter of the skew-normal noise.
pub const SKEW_SHAPE: f64 = 10.0;
/// Degrees of freedom of the Student-t noise.
pub const T_DOF: f64 = 20.0;
/// First and last (1-based) positions carrying the fused-lasso signal.
pub const SIGNAL_BLOCK: (usize, usize) = (21, 40);

/// Zero-mean, unit-variance noise families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    Gaussian,
    Laplace,
    SkewNormal,
    StudentT,
}

impl FromStr for NoiseKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseKind::Gaussian),
            "laplace" => Ok(NoiseKind::Laplace),
            "skew_normal" | "skewnormal" | "skew" => Ok(NoiseKind::SkewNormal),
            "t20" | "student_t" | "studentt" => Ok(NoiseKind::StudentT),
            other => Err(HarnessError::UnknownNoise(other.to_string())),
        }
    }
}

impl NoiseKind {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseKind::Gaussian => "gaussian",
            NoiseKind::Laplace => "laplace",
            NoiseKind::SkewNormal => "skew_normal",
            NoiseKind::StudentT => "t20",
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        match self {
            NoiseKind::Gaussian => DVector::from_fn(n, |_, _| StandardNormal.sample(rng)),
            NoiseKind::Laplace => {
                // Var = 2 b^2.
                let b = std::f64::consts::FRAC_1_SQRT_2;
                DVector::from_fn(n, |_, _| {
                    let e: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        b * e
                    } else {
                        -b * e
                    }
                })
            }
            NoiseKind::SkewNormal => {
                let d = SKEW_SHAPE / (1.0 + SKEW_SHAPE * SKEW_SHAPE).sqrt();
                let mean = d * (2.0 / std::f64::consts::PI).sqrt();
                let sd = (1.0 - 2.0 * d * d / std::f64::consts::PI).sqrt();
                let dist = SkewNormal::new(0.0, 1.0, SKEW_SHAPE).expect("valid skew normal");
                DVector::from_fn(n, |_, _| (dist.sample(rng) - mean) / sd)
            }
            NoiseKind::StudentT => {
                let scale = ((T_DOF - 2.0) / T_DOF).sqrt();
                let dist = StudentT::new(T_DOF).expect("valid t");
                DVector::from_fn(n, |_, _| dist.sample(rng) * scale)
            }
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes several indices into one seed (splitmix64 finalizer).
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x9e37_79b9_7f4a_7c15, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(acc << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    })
}

fn check_n(n: usize) -> Result<()> {
    if n < 3 {
        return Err(HarnessError::input(format!("need n >= 3, got {n}")));
    }
    Ok(())
}

/// Mean vector with `delta_mu` on positions 21..=40 (1-based) and 0 elsewhere.
pub fn fused_mean(n: usize, delta_mu: f64) -> DVector<f64> {
    let (first, last) = SIGNAL_BLOCK;
    DVector::from_fn(n, |i, _| {
        if (first - 1..last).contains(&i) {
            delta_mu
        } else {
            0.0
        }
    })
}

/// 0-based penalty rows at the true change points of [`fused_mean`].
pub fn fused_true_changepoints(n: usize) -> Vec<usize> {
    let (first, last) = SIGNAL_BLOCK;
    [first - 2, last - 1]
        .into_iter()
        .filter(|&j| j + 1 < n)
        .collect()
}

pub fn gen_fused_null(n: usize, seed: u64) -> Result<DVector<f64>> {
    gen_fused_signal(n, 0.0, seed)
}

pub fn gen_fused_signal(n: usize, delta_mu: f64, seed: u64) -> Result<DVector<f64>> {
    check_n(n)?;
    Ok(fused_mean(n, delta_mu) + NoiseKind::Gaussian.sample(&mut rng(seed), n))
}

/// `y = X beta + noise` with standard Gaussian rows of `X`.
pub fn gen_regression(
    n: usize,
    beta: &DVector<f64>,
    noise: NoiseKind,
    seed: u64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_n(n)?;
    if beta.is_empty() {
        return Err(HarnessError::input("beta must have at least one entry"));
    }
    let mut rng = rng(seed);
    let x = DMatrix::from_fn(n, beta.len(), |_, _| StandardNormal.sample(&mut rng));
    let y = &x * beta + noise.sample(&mut rng, n);
    Ok((x, y))
}

/// `beta` with the first `k` entries set to `value`.
pub fn sparse_beta(p: usize, k: usize, value: f64) -> DVector<f64> {
    DVector::from_fn(p, |j, _| if j < k { value } else { 0.0 })
}

/// `RSS / (n - p)` of the least-squares fit on all columns.
pub fn estimate_sigma_full_model(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(HarnessError::input(format!(
            "X has {n} rows but y has {}",
            y.len()
        )));
    }
    if n <= p {
        return Err(ppsi_core::Error::RankDeficient.into());
    }
    if ppsi_core::linalg::rank(x, 1e-10) < p {
        return Err(ppsi_core::Error::RankDeficient.into());
    }
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(y, 1e-12)
        .map_err(|_| HarnessError::Core(ppsi_core::Error::RankDeficient))?;
    let rss = (y - x * beta).norm_squared();
    Ok(rss / (n - p) as f64)
}

/// Sample variance, used as the noise estimate when `X = I`.
pub fn sample_variance(y: &DVector<f64>) -> Result<f64> {
    check_n(y.len())?;
    let mean = y.mean();
    Ok(y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (y.len() - 1) as f64)
}
