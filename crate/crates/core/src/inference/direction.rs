use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{ActiveSet, DesignMatrix, EstimatorKind, PenaltyKind, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirectionKind {
    LassoCoef,
    ChangepointMeanDiff,
    TrendKink,
    FullTarget,
    PartialTarget,
}

/// Contrast `eta` whose inner product with `y` is the tested statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDirection {
    pub eta: DVector<f64>,
    pub j: usize,
    pub kind: DirectionKind,
}

/// Refitted least-squares coefficient of feature `j` on the active columns.
pub fn eta_lasso(design: &DesignMatrix, active: &ActiveSet, j: usize) -> Result<TestDirection> {
    let pos = active.position(j).ok_or(Error::NotSelected(j))?;
    let xm = linalg::select_columns(design.x(), &active.indices);
    let eta = linalg::projection_contrast(&xm, pos)?;
    Ok(TestDirection {
        eta,
        j,
        kind: DirectionKind::LassoCoef,
    })
}

/// Difference in means around the changepoint given by difference row `j`.
///
/// Row `j` of the fused penalty compares positions `j` and `j + 1` (0-based), so the
/// segment to the left ends at 0-based index `j` and the neighbouring active rows bound
/// the two segments.
pub fn eta_changepoint(n: usize, active: &ActiveSet, j: usize) -> Result<TestDirection> {
    let pos = active.position(j).ok_or(Error::NotSelected(j))?;
    if j + 1 >= n {
        return Err(Error::IndexOutOfRange {
            index: j,
            len: n.saturating_sub(1),
        });
    }
    let cp = j + 1;
    let prev = if pos == 0 {
        0
    } else {
        active.indices[pos - 1] + 1
    };
    let next = active.indices.get(pos + 1).map_or(n, |&k| k + 1);
    if cp <= prev || next <= cp || next > n {
        return Err(Error::EmptySegment(j));
    }
    let mut eta = DVector::zeros(n);
    let left = 1.0 / (cp - prev) as f64;
    let right = 1.0 / (next - cp) as f64;
    for i in prev..cp {
        eta[i] = left;
    }
    for i in cp..next {
        eta[i] = -right;
    }
    Ok(TestDirection {
        eta,
        j,
        kind: DirectionKind::ChangepointMeanDiff,
    })
}

/// Second difference centred at 0-based position `center`.
pub fn eta_trend(n: usize, center: usize) -> Result<TestDirection> {
    if center == 0 || center + 1 >= n {
        return Err(Error::IndexOutOfRange {
            index: center,
            len: n,
        });
    }
    let mut eta = DVector::zeros(n);
    eta[center - 1] = 1.0;
    eta[center] = -2.0;
    eta[center + 1] = 1.0;
    Ok(TestDirection {
        eta,
        j: center - 1,
        kind: DirectionKind::TrendKink,
    })
}

/// Default test direction for component `j` of `active` under `spec`.
pub fn eta_for(spec: &ProblemSpec, active: &ActiveSet, j: usize) -> Result<TestDirection> {
    if spec.kind() != EstimatorKind::GeneralizedLasso {
        return eta_lasso(spec.design(), active, j);
    }
    let n = spec.n();
    let identity_design = spec.p() == n && spec.design().x() == &DMatrix::identity(n, n);
    match spec.penalty().kind() {
        PenaltyKind::Identity => eta_lasso(spec.design(), active, j),
        PenaltyKind::FusedLasso if identity_design => eta_changepoint(n, active, j),
        PenaltyKind::TrendFilter if identity_design => {
            if !active.contains(j) {
                return Err(Error::NotSelected(j));
            }
            eta_trend(n, j + 1)
        }
        _ => Err(Error::InvalidArgument(
            "no default test direction for this penalty and design; supply one".into(),
        )),
    }
}

/// Noise covariance of `y`.
#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// `sigma2 · I`.
    Isotropic(f64),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Covariance::Isotropic(s2) => v * *s2,
            Covariance::Full(m) => m * v,
        }
    }

    pub fn quad(&self, v: &DVector<f64>) -> f64 {
        v.dot(&self.apply(v))
    }

    pub fn check(&self, n: usize) -> Result<()> {
        match self {
            Covariance::Isotropic(s2) if !(*s2 > 0.0 && s2.is_finite()) => Err(
                Error::InvalidArgument(format!("noise variance must be > 0, got {s2}")),
            ),
            Covariance::Full(m) if m.nrows() != n || m.ncols() != n => {
                Err(Error::DimensionMismatch(format!(
                    "covariance is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )))
            }
            _ => Ok(()),
        }
    }

    /// Covariance of the sub-vector `y[rows]`.
    pub fn restrict(&self, rows: &[usize]) -> Covariance {
        match self {
            Covariance::Isotropic(s2) => Covariance::Isotropic(*s2),
            Covariance::Full(m) => {
                Covariance::Full(DMatrix::from_fn(rows.len(), rows.len(), |i, j| {
                    m[(rows[i], rows[j])]
                }))
            }
        }
    }
}

/// The data line `y(z) = a + b z` through `y_obs` along `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LineParam {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub z_obs: f64,
    pub var: f64,
}

impl LineParam {
    pub fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    pub fn y_at(&self, z: f64) -> DVector<f64> {
        &self.a + &self.b * z
    }
}

pub fn line_params(
    eta: &DVector<f64>,
    cov: &Covariance,
    y_obs: &DVector<f64>,
) -> Result<LineParam> {
    if eta.len() != y_obs.len() {
        return Err(Error::DimensionMismatch(format!(
            "eta has length {}, y has {}",
            eta.len(),
            y_obs.len()
        )));
    }
    cov.check(y_obs.len())?;
    let s_eta = cov.apply(eta);
    let var = eta.dot(&s_eta);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let b = s_eta / var;
    let z_obs = eta.dot(y_obs);
    let a = y_obs - &b * z_obs;
    Ok(LineParam { a, b, z_obs, var })
}
