mod common;

use common::*;
use nalgebra::DVector;
use ppsi_core::inference::fit;
use ppsi_core::problems::{encode, DesignMatrix, ProblemSpec};

#[test]
fn optimum_objective_matches_reference_solvers() {
    for (k, name) in ESTIMATORS.iter().enumerate() {
        let mut rng = rng(1000 + k as u64);
        for trial in 0..50 {
            let (spec, y) = random_instance(name, &mut rng);
            let ours = fit(&spec, &y).unwrap();
            let reference = reference_beta(&spec, &y);
            let f_ours = spec.objective(&ours.beta, &y);
            let f_ref = spec.objective(&reference, &y);
            let rel = (f_ours - f_ref) / f_ref.abs().max(1e-12);
            assert!(
                rel < 1e-6,
                "{name} trial {trial}: objective {f_ours} vs reference {f_ref}"
            );
            // The reference is approximate, so the QP may only be better.
            assert!(
                rel > -1e-6,
                "{name} trial {trial}: reference beats QP by {rel}"
            );
        }
    }
}

#[test]
fn trend_filter_matches_admm() {
    let mut rng = rng(77);
    for _ in 0..20 {
        let (spec, y) = random_instance("trend", &mut rng);
        let ours = fit(&spec, &y).unwrap();
        let reference = reference_beta(&spec, &y);
        let (a, b) = (
            spec.objective(&ours.beta, &y),
            spec.objective(&reference, &y),
        );
        assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
    }
}

#[test]
fn split_variables_are_complementary() {
    for (k, name) in ESTIMATORS.iter().enumerate() {
        let mut rng = rng(2000 + k as u64);
        for _ in 0..20 {
            let (spec, y) = random_instance(name, &mut rng);
            let r = fit(&spec, &y).unwrap().r;
            let p = spec.p();
            let pairs: Vec<(usize, usize)> = match *name {
                "fused" => {
                    let m = spec.penalty().m();
                    (0..m).map(|j| (p - m + j, p + j)).collect()
                }
                "lasso" | "enet" => (0..p).map(|j| (j, p + j)).collect(),
                "huber" => {
                    let n = spec.n();
                    (0..p).map(|j| (2 * n + j, 2 * n + p + j)).collect()
                }
                _ => Vec::new(),
            };
            for (i, j) in pairs {
                assert!(
                    r[i].min(r[j]) <= 1e-8,
                    "{name}: both halves positive at {i}, {j}"
                );
            }
        }
    }
}

#[test]
fn lasso_support_shrinks_with_lambda() {
    let mut rng = rng(3);
    for _ in 0..20 {
        let x = gaussian_mat(&mut rng, 20, 6);
        let y = gaussian_vec(&mut rng, 20);
        let design = DesignMatrix::new(x).unwrap();
        let big = fit(
            &ProblemSpec::vanilla_lasso(design.clone(), 1e3).unwrap(),
            &y,
        )
        .unwrap();
        let small = fit(&ProblemSpec::vanilla_lasso(design, 1e-3).unwrap(), &y).unwrap();
        assert!(big.active.len() <= small.active.len());
    }
}

#[test]
fn elastic_net_without_ridge_is_rescaled_lasso() {
    let mut rng = rng(4);
    for _ in 0..10 {
        let n = 15;
        let x = gaussian_mat(&mut rng, n, 5);
        let y = gaussian_vec(&mut rng, n);
        let design = DesignMatrix::new(x).unwrap();
        let lam = 0.05;
        let enet = fit(
            &ProblemSpec::elastic_net(design.clone(), lam, 0.0).unwrap(),
            &y,
        )
        .unwrap();
        let lasso = fit(
            &ProblemSpec::vanilla_lasso(design, n as f64 * lam).unwrap(),
            &y,
        )
        .unwrap();
        assert_eq!(enet.active, lasso.active);
        assert!((enet.beta - lasso.beta).amax() < 1e-8);
    }
}

#[test]
fn elastic_net_heavy_ridge_vanishes() {
    let mut rng = rng(5);
    let x = gaussian_mat(&mut rng, 12, 4);
    let y = gaussian_vec(&mut rng, 12) * 5.0;
    let spec = ProblemSpec::elastic_net(DesignMatrix::new(x).unwrap(), 0.01, 1e6).unwrap();
    assert!(fit(&spec, &y).unwrap().beta.amax() <= 1e-3);
}

#[test]
fn huber_single_outlier_against_irls() {
    let mut rng = rng(6);
    let n = 20;
    let x = gaussian_mat(&mut rng, n, 3);
    let mut y = &x * DVector::from_row_slice(&[1.0, -0.5, 0.25]) + gaussian_vec(&mut rng, n) * 0.1;
    y[7] += 25.0;
    let delta = 1.0;
    let spec = ProblemSpec::huber_l1(DesignMatrix::new(x.clone()).unwrap(), 0.0, delta).unwrap();
    let ours = fit(&spec, &y).unwrap();
    let reference = irls_huber(&x, &y, delta);
    assert!((&ours.beta - &reference).amax() < 1e-6);
    let resid = &y - &x * &ours.beta;
    let (phi, nu) = (ours.r[7], ours.r[n + 7]);
    assert!((phi - delta).abs() < 1e-8);
    assert!((nu - (resid[7].abs() - delta)).abs() < 1e-6);
    for i in 0..n {
        assert!((ours.r[i] + ours.r[n + i] - resid[i].abs()).abs() < 1e-6);
    }
}

#[test]
fn huber_with_huge_delta_is_least_squares() {
    let y = DVector::from_row_slice(&[1.5, -2.0, 0.3]);
    let spec = ProblemSpec::huber_l1(DesignMatrix::identity(3), 0.0, 1e6).unwrap();
    let f = fit(&spec, &y).unwrap();
    assert!((f.beta - &y).amax() < 1e-8);
}

#[test]
fn fused_step_signal_finds_the_jump() {
    let y = DVector::from_fn(10, |i, _| if i < 5 { 0.0 } else { 5.0 });
    let f = fit(&ProblemSpec::fused_lasso(10, 1.0).unwrap(), &y).unwrap();
    assert_eq!(f.active.indices, vec![4]);
}

#[test]
fn encoded_problems_are_convex() {
    let mut rng = rng(8);
    for name in ESTIMATORS {
        let (spec, y) = random_instance(name, &mut rng);
        let qp = encode(&spec, &y, &DVector::zeros(y.len())).unwrap();
        qp.check_psd().unwrap();
        assert_eq!(qp.p().nrows(), spec.qp_dim());
    }
}
