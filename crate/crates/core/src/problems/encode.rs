use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{DesignMatrix, EstimatorKind, PenaltyKind, PenaltySpec, Prepared, ProblemSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::pqp::ParametricQP;

const RANK_TOL: f64 = 1e-10;

/// Builds the data-independent parts of the QP.
///
/// The generalized lasso is written over `(w, xi+, xi-)` where `xi = D beta` and
/// `w = C beta` for unit rows `C` completing `D` to an invertible matrix. Only the
/// sign constraints on `xi±` remain, which keeps the KKT block regular along the path.
pub(super) fn prepare(
    kind: EstimatorKind,
    design: &DesignMatrix,
    penalty: &PenaltySpec,
    lambda: f64,
) -> Result<Prepared> {
    let x = design.x();
    let (n, p) = (design.n(), design.p());
    match kind {
        EstimatorKind::GeneralizedLasso => {
            let d = penalty.d();
            let m = d.nrows();
            if m > p || linalg::rank(d, RANK_TOL) < m {
                return Err(Error::RankDeficientPenalty);
            }
            let c = completion(penalty)?;
            let mut stacked = DMatrix::zeros(p, p);
            stacked.view_mut((0, 0), (m, p)).copy_from(d);
            stacked.view_mut((m, 0), (p - m, p)).copy_from(&c);
            let t = linalg::inverse(&stacked).map_err(|_| Error::RankDeficientPenalty)?;
            let t_xi = t.columns(0, m).into_owned();
            let t_w = t.columns(m, p - m).into_owned();
            let z_xi = x * &t_xi;
            let z_w = x * &t_w;
            let dim = p + m;
            let mut big = DMatrix::zeros(n, dim);
            big.view_mut((0, 0), (n, p - m)).copy_from(&z_w);
            big.view_mut((0, p - m), (n, m)).copy_from(&z_xi);
            big.view_mut((0, p), (n, m)).copy_from(&(-&z_xi));
            let mut q_const = DVector::zeros(dim);
            q_const.rows_mut(p - m, 2 * m).fill(lambda);
            let mut g = DMatrix::zeros(2 * m, dim);
            for j in 0..m {
                g[(j, p - m + j)] = -1.0;
                g[(m + j, p + j)] = -1.0;
            }
            Ok(Prepared {
                p: gram(&big),
                q_lin: Some(-big.transpose()),
                q_const,
                g,
                h_const: DVector::zeros(2 * m),
                h_lin: None,
                basis: Some((t_xi, t_w)),
            })
        }
        EstimatorKind::VanillaLasso | EstimatorKind::ElasticNet { .. } => {
            let (scale, zeta) = match kind {
                EstimatorKind::ElasticNet { zeta } => (1.0 / n as f64, zeta),
                _ => (1.0, 0.0),
            };
            let xtx = gram(x) * scale + DMatrix::identity(p, p) * zeta;
            let mut pm = DMatrix::zeros(2 * p, 2 * p);
            pm.view_mut((0, 0), (p, p)).copy_from(&xtx);
            pm.view_mut((p, p), (p, p)).copy_from(&xtx);
            pm.view_mut((0, p), (p, p)).copy_from(&(-&xtx));
            pm.view_mut((p, 0), (p, p)).copy_from(&(-&xtx));
            let mut lin = DMatrix::zeros(2 * p, n);
            lin.view_mut((0, 0), (p, n))
                .copy_from(&(-x.transpose() * scale));
            lin.view_mut((p, 0), (p, n))
                .copy_from(&(x.transpose() * scale));
            Ok(Prepared {
                p: pm,
                q_lin: Some(lin),
                q_const: DVector::from_element(2 * p, lambda),
                g: -DMatrix::identity(2 * p, 2 * p),
                h_const: DVector::zeros(2 * p),
                h_lin: None,
                basis: None,
            })
        }
        EstimatorKind::Nnls => Ok(Prepared {
            p: gram(x),
            q_lin: Some(-x.transpose()),
            q_const: DVector::zeros(p),
            g: -DMatrix::identity(p, p),
            h_const: DVector::zeros(p),
            h_lin: None,
            basis: None,
        }),
        EstimatorKind::HuberL1 { delta } => {
            // r = (phi, nu, beta+, beta-)
            let dim = 2 * n + 2 * p;
            let rows = 5 * n + 2 * p;
            let mut pm = DMatrix::zeros(dim, dim);
            for i in 0..n {
                pm[(i, i)] = 1.0;
            }
            let mut q_const = DVector::zeros(dim);
            q_const.rows_mut(n, n).fill(delta);
            q_const.rows_mut(2 * n, 2 * p).fill(lambda);
            let mut g = DMatrix::zeros(rows, dim);
            let mut h_const = DVector::zeros(rows);
            let mut h_lin = DMatrix::zeros(rows, n);
            for i in 0..n {
                // y - X beta <= phi + nu
                g[(i, i)] = -1.0;
                g[(i, n + i)] = -1.0;
                // -(phi + nu) <= y - X beta
                g[(n + i, i)] = -1.0;
                g[(n + i, n + i)] = -1.0;
                for j in 0..p {
                    g[(i, 2 * n + j)] = -x[(i, j)];
                    g[(i, 2 * n + p + j)] = x[(i, j)];
                    g[(n + i, 2 * n + j)] = x[(i, j)];
                    g[(n + i, 2 * n + p + j)] = -x[(i, j)];
                }
                h_lin[(i, i)] = -1.0;
                h_lin[(n + i, i)] = 1.0;
                g[(2 * n + i, i)] = 1.0;
                h_const[2 * n + i] = delta;
                g[(3 * n + i, i)] = -1.0;
                g[(4 * n + i, n + i)] = -1.0;
            }
            for j in 0..2 * p {
                g[(5 * n + j, 2 * n + j)] = -1.0;
            }
            Ok(Prepared {
                p: pm,
                q_lin: None,
                q_const,
                g,
                h_const,
                h_lin: Some(h_lin),
                basis: None,
            })
        }
    }
}

/// Unit rows that complete a full-row-rank `D` to a square invertible matrix.
fn completion(penalty: &PenaltySpec) -> Result<DMatrix<f64>> {
    let d = penalty.d();
    let (m, p) = d.shape();
    let unit = |ks: &[usize]| {
        let mut c = DMatrix::zeros(ks.len(), p);
        for (i, &k) in ks.iter().enumerate() {
            c[(i, k)] = 1.0;
        }
        c
    };
    match penalty.kind() {
        PenaltyKind::Identity => return Ok(DMatrix::zeros(0, p)),
        PenaltyKind::FusedLasso => return Ok(unit(&[0])),
        PenaltyKind::TrendFilter => return Ok(unit(&[0, 1])),
        PenaltyKind::Custom => {}
    }
    let mut rows = d.clone();
    let mut picked = Vec::new();
    for k in 0..p {
        if picked.len() == p - m {
            break;
        }
        let mut cand = rows.clone().insert_row(rows.nrows(), 0.0);
        cand[(rows.nrows(), k)] = 1.0;
        if linalg::rank(&cand, RANK_TOL) == cand.nrows() {
            rows = cand;
            picked.push(k);
        }
    }
    if picked.len() != p - m {
        return Err(Error::RankDeficientPenalty);
    }
    Ok(unit(&picked))
}

fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    let g = x.transpose() * x;
    (&g + g.transpose()) * 0.5
}

fn check_line(spec: &ProblemSpec, a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    let n = spec.n();
    if a.len() != n || b.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "line vectors have lengths {}/{}, expected {n}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("line vectors must be finite".into()));
    }
    Ok(())
}

fn build(spec: &ProblemSpec, a: &DVector<f64>, b: &DVector<f64>) -> Result<ParametricQP> {
    check_line(spec, a, b)?;
    let pr = spec.prepared();
    let (q0, q1) = match &pr.q_lin {
        Some(lin) => (&pr.q_const + lin * a, lin * b),
        None => (pr.q_const.clone(), DVector::zeros(pr.q_const.len())),
    };
    let (h0, h1) = match &pr.h_lin {
        Some(lin) => (&pr.h_const + lin * a, lin * b),
        None => (pr.h_const.clone(), DVector::zeros(pr.h_const.len())),
    };
    ParametricQP::new(pr.p.clone(), pr.g.clone(), q0, q1, h0, h1)
}

pub fn encode_generalized_lasso(
    spec: &ProblemSpec,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<ParametricQP> {
    if spec.kind() != EstimatorKind::GeneralizedLasso {
        return Err(Error::KindMismatch {
            expected: "generalized lasso",
        });
    }
    build(spec, a, b)
}

pub fn encode_vanilla_lasso(
    spec: &ProblemSpec,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<ParametricQP> {
    if spec.kind() != EstimatorKind::VanillaLasso {
        return Err(Error::KindMismatch {
            expected: "vanilla lasso",
        });
    }
    build(spec, a, b)
}

pub fn encode_elastic_net(
    spec: &ProblemSpec,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<ParametricQP> {
    if !matches!(spec.kind(), EstimatorKind::ElasticNet { .. }) {
        return Err(Error::KindMismatch {
            expected: "elastic net",
        });
    }
    build(spec, a, b)
}

pub fn encode_nnls(spec: &ProblemSpec, a: &DVector<f64>, b: &DVector<f64>) -> Result<ParametricQP> {
    if spec.kind() != EstimatorKind::Nnls {
        return Err(Error::KindMismatch {
            expected: "non-negative least squares",
        });
    }
    build(spec, a, b)
}

pub fn encode_huber_l1(
    spec: &ProblemSpec,
    a: &DVector<f64>,
    b: &DVector<f64>,
) -> Result<ParametricQP> {
    let EstimatorKind::HuberL1 { delta } = spec.kind() else {
        return Err(Error::KindMismatch {
            expected: "Huber + l1",
        });
    };
    let qp = build(spec, a, b)?;
    let (n, p) = (spec.n(), spec.p());
    let (a, b) = (a.clone(), b.clone());
    // beta = 0 with the residual split into its clipped and excess parts.
    let start = move |z: f64| {
        let mut r = DVector::zeros(2 * n + 2 * p);
        for i in 0..n {
            let e = (a[i] + b[i] * z).abs();
            r[i] = e.min(delta);
            r[n + i] = (e - delta).max(0.0);
        }
        r
    };
    Ok(qp.with_feasible_start(Arc::new(start)))
}

/// Encodes `spec` along `y(z) = a + b z`.
pub fn encode(spec: &ProblemSpec, a: &DVector<f64>, b: &DVector<f64>) -> Result<ParametricQP> {
    match spec.kind() {
        EstimatorKind::GeneralizedLasso => encode_generalized_lasso(spec, a, b),
        EstimatorKind::VanillaLasso => encode_vanilla_lasso(spec, a, b),
        EstimatorKind::ElasticNet { .. } => encode_elastic_net(spec, a, b),
        EstimatorKind::Nnls => encode_nnls(spec, a, b),
        EstimatorKind::HuberL1 { .. } => encode_huber_l1(spec, a, b),
    }
}
