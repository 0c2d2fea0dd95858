//! Estimators expressed as parametric QPs along a data line `y(z) = a + b z`.

mod encode;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

pub use encode::{
    encode, encode_elastic_net, encode_generalized_lasso, encode_huber_l1, encode_nnls,
    encode_vanilla_lasso,
};

/// Threshold for a nonzero coefficient.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidProblem(format!(
                "design must be at least 1x1, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "design has non-finite entries".into(),
            ));
        }
        Ok(Self { x })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            x: DMatrix::identity(n, n),
        }
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `rows` of the design.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(linalg::select_rows(&self.x, rows))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    Identity,
    FusedLasso,
    TrendFilter,
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    d: DMatrix<f64>,
    kind: PenaltyKind,
}

impl PenaltySpec {
    pub fn custom(d: DMatrix<f64>) -> Result<Self> {
        if d.nrows() == 0 || d.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem(
                "custom penalty must be nonempty and finite".into(),
            ));
        }
        Ok(Self {
            d,
            kind: PenaltyKind::Custom,
        })
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn m(&self) -> usize {
        self.d.nrows()
    }
}

/// Banded penalty matrix for `p` coefficients.
pub fn make_penalty(kind: PenaltyKind, p: usize) -> Result<PenaltySpec> {
    let band: &[f64] = match kind {
        PenaltyKind::Identity => &[1.0],
        PenaltyKind::FusedLasso => &[-1.0, 1.0],
        PenaltyKind::TrendFilter => &[-1.0, 2.0, -1.0],
        PenaltyKind::Custom => {
            return Err(Error::InvalidArgument(
                "use PenaltySpec::custom for custom penalties".into(),
            ))
        }
    };
    let min = band.len().max(1);
    if p < min || p == 0 {
        return Err(Error::DimensionTooSmall { min, got: p });
    }
    let m = p + 1 - band.len();
    let mut d = DMatrix::zeros(m, p);
    for i in 0..m {
        for (k, &v) in band.iter().enumerate() {
            d[(i, i + k)] = v;
        }
    }
    Ok(PenaltySpec { d, kind })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    GeneralizedLasso,
    VanillaLasso,
    ElasticNet { zeta: f64 },
    Nnls,
    HuberL1 { delta: f64 },
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::GeneralizedLasso => "generalized lasso",
            EstimatorKind::VanillaLasso => "vanilla lasso",
            EstimatorKind::ElasticNet { .. } => "elastic net",
            EstimatorKind::Nnls => "non-negative least squares",
            EstimatorKind::HuberL1 { .. } => "Huber + l1",
        }
    }
}

/// Precomputed pieces shared by every encoding of one spec.
#[derive(Debug)]
pub(crate) struct Prepared {
    /// Quadratic term of the QP.
    pub(crate) p: DMatrix<f64>,
    /// `q = q_const + q_lin · y`; `None` when `q` does not depend on `y`.
    pub(crate) q_lin: Option<DMatrix<f64>>,
    pub(crate) q_const: DVector<f64>,
    pub(crate) g: DMatrix<f64>,
    /// `h = h_const + h_lin · y`.
    pub(crate) h_const: DVector<f64>,
    pub(crate) h_lin: Option<DMatrix<f64>>,
    /// Generalized lasso only: `beta = t_xi · xi + t_w · w`.
    pub(crate) basis: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// An estimator with its data-independent inputs fixed.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    kind: EstimatorKind,
    design: DesignMatrix,
    penalty: PenaltySpec,
    lambda: f64,
    prepared: Arc<Prepared>,
}

impl ProblemSpec {
    pub fn new(
        kind: EstimatorKind,
        design: DesignMatrix,
        penalty: PenaltySpec,
        lambda: f64,
    ) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {lambda}"
            )));
        }
        match kind {
            EstimatorKind::ElasticNet { zeta } if !(zeta >= 0.0 && zeta.is_finite()) => {
                return Err(Error::InvalidArgument(format!(
                    "zeta must be >= 0, got {zeta}"
                )));
            }
            EstimatorKind::HuberL1 { delta } if !(delta > 0.0 && delta.is_finite()) => {
                return Err(Error::InvalidArgument(format!(
                    "delta must be > 0, got {delta}"
                )));
            }
            _ => {}
        }
        if kind != EstimatorKind::GeneralizedLasso && penalty.kind() != PenaltyKind::Identity {
            return Err(Error::InvalidProblem(format!(
                "{} requires the identity penalty",
                kind.name()
            )));
        }
        if penalty.d().ncols() != design.p() {
            return Err(Error::DimensionMismatch(format!(
                "penalty has {} columns, design has {}",
                penalty.d().ncols(),
                design.p()
            )));
        }
        let prepared = Arc::new(encode::prepare(kind, &design, &penalty, lambda)?);
        Ok(Self {
            kind,
            design,
            penalty,
            lambda,
            prepared,
        })
    }

    pub fn generalized_lasso(
        design: DesignMatrix,
        penalty: PenaltySpec,
        lambda: f64,
    ) -> Result<Self> {
        Self::new(EstimatorKind::GeneralizedLasso, design, penalty, lambda)
    }

    /// Fused lasso on `X = I_n`.
    pub fn fused_lasso(n: usize, lambda: f64) -> Result<Self> {
        let penalty = make_penalty(PenaltyKind::FusedLasso, n)?;
        Self::generalized_lasso(DesignMatrix::identity(n), penalty, lambda)
    }

    pub fn vanilla_lasso(design: DesignMatrix, lambda: f64) -> Result<Self> {
        let penalty = make_penalty(PenaltyKind::Identity, design.p())?;
        Self::new(EstimatorKind::VanillaLasso, design, penalty, lambda)
    }

    pub fn elastic_net(design: DesignMatrix, lambda: f64, zeta: f64) -> Result<Self> {
        let penalty = make_penalty(PenaltyKind::Identity, design.p())?;
        Self::new(EstimatorKind::ElasticNet { zeta }, design, penalty, lambda)
    }

    pub fn nnls(design: DesignMatrix) -> Result<Self> {
        let penalty = make_penalty(PenaltyKind::Identity, design.p())?;
        Self::new(EstimatorKind::Nnls, design, penalty, 0.0)
    }

    pub fn huber_l1(design: DesignMatrix, lambda: f64, delta: f64) -> Result<Self> {
        let penalty = make_penalty(PenaltyKind::Identity, design.p())?;
        Self::new(EstimatorKind::HuberL1 { delta }, design, penalty, lambda)
    }

    /// Same estimator on a different design (used for fold and split fits).
    pub fn with_design(&self, design: DesignMatrix) -> Result<Self> {
        let penalty = if self.kind == EstimatorKind::GeneralizedLasso {
            self.penalty.clone()
        } else {
            make_penalty(PenaltyKind::Identity, design.p())?
        };
        Self::new(self.kind, design, penalty, self.lambda)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.kind, self.design.clone(), self.penalty.clone(), lambda)
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn penalty(&self) -> &PenaltySpec {
        &self.penalty
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn p(&self) -> usize {
        self.design.p()
    }

    pub(crate) fn prepared(&self) -> &Prepared {
        &self.prepared
    }

    /// Number of QP decision variables.
    pub fn qp_dim(&self) -> usize {
        self.prepared.p.nrows()
    }

    /// Whether selection is over rows of `D` (generalized lasso) or over features.
    pub fn selects_penalty_rows(&self) -> bool {
        self.kind == EstimatorKind::GeneralizedLasso
    }

    /// Coefficients `beta` recovered from a QP solution.
    pub fn beta(&self, r: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        match self.kind {
            EstimatorKind::GeneralizedLasso => {
                let (t_xi, t_w) = self.prepared.basis.as_ref().expect("basis");
                let m = self.penalty.m();
                let w = r.rows(0, p - m);
                let xi = r.rows(p - m, m) - r.rows(p, m);
                t_xi * xi + t_w * w
            }
            EstimatorKind::VanillaLasso | EstimatorKind::ElasticNet { .. } => {
                r.rows(0, p) - r.rows(p, p)
            }
            EstimatorKind::Nnls => r.clone_owned(),
            EstimatorKind::HuberL1 { .. } => {
                let n = self.n();
                r.rows(2 * n, p) - r.rows(2 * n + p, p)
            }
        }
    }

    /// The components whose nonzero pattern defines the selection: `D beta` for the
    /// generalized lasso, `beta` otherwise.
    pub fn selection_components(&self, r: &DVector<f64>) -> DVector<f64> {
        match self.kind {
            EstimatorKind::GeneralizedLasso => {
                let p = self.p();
                let m = self.penalty.m();
                r.rows(p - m, m) - r.rows(p, m)
            }
            _ => self.beta(r),
        }
    }

    /// Number of components the active set ranges over.
    pub fn n_components(&self) -> usize {
        match self.kind {
            EstimatorKind::GeneralizedLasso => self.penalty.m(),
            _ => self.p(),
        }
    }

    /// Objective of the original estimator at `beta` for response `y`.
    pub fn objective(&self, beta: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let resid = y - self.design.x() * beta;
        let l1 = |v: &DVector<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
        match self.kind {
            EstimatorKind::GeneralizedLasso => {
                0.5 * resid.norm_squared() + self.lambda * l1(&(self.penalty.d() * beta))
            }
            EstimatorKind::VanillaLasso => 0.5 * resid.norm_squared() + self.lambda * l1(beta),
            EstimatorKind::ElasticNet { zeta } => {
                0.5 / self.n() as f64 * resid.norm_squared()
                    + self.lambda * l1(beta)
                    + 0.5 * zeta * beta.norm_squared()
            }
            EstimatorKind::Nnls => 0.5 * resid.norm_squared(),
            EstimatorKind::HuberL1 { delta } => {
                let loss: f64 = resid
                    .iter()
                    .map(|e| {
                        if e.abs() <= delta {
                            0.5 * e * e
                        } else {
                            delta * (e.abs() - 0.5 * delta)
                        }
                    })
                    .sum();
                loss + self.lambda * l1(beta)
            }
        }
    }
}

/// Sorted indices of nonzero components with their signs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub signs: Vec<i8>,
}

impl ActiveSet {
    pub fn from_indices(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let signs = vec![1; indices.len()];
        Self { indices, signs }
    }

    /// Components of `v` with `|v_j| > tol`.
    pub fn from_values(v: &DVector<f64>, tol: f64) -> Self {
        let mut indices = Vec::new();
        let mut signs = Vec::new();
        for (j, &x) in v.iter().enumerate() {
            if x.abs() > tol {
                indices.push(j);
                signs.push(if x > 0.0 { 1 } else { -1 });
            }
        }
        Self { indices, signs }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn position(&self, j: usize) -> Option<usize> {
        self.indices.binary_search(&j).ok()
    }

    /// Index-set equality, ignoring signs.
    pub fn same_indices(&self, other: &ActiveSet) -> bool {
        self.indices == other.indices
    }
}

/// Active set of a QP solution laid out for `spec`.
pub fn extract_active_set(spec: &ProblemSpec, r: &DVector<f64>, tol: f64) -> ActiveSet {
    let v = spec.selection_components(r);
    if spec.kind() == EstimatorKind::Nnls {
        let kept = v.map(|x| if x > tol { x } else { 0.0 });
        return ActiveSet::from_values(&kept, tol);
    }
    ActiveSet::from_values(&v, tol)
}
