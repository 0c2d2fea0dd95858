use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use ppsi_harness::data::{gen_regression, sparse_beta, NoiseKind};
use ppsi_harness::io::{breakpoints, parse_path_csv, parse_results_csv};

fn ppsi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppsi"))
        .args(args)
        .env_remove("PPSI_THREADS")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn matrix_csv(x: &nalgebra::DMatrix<f64>) -> String {
    let mut s = (0..x.ncols())
        .map(|j| format!("x{j}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for row in x.row_iter() {
        s += &row
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
    }
    s
}

fn vector_csv(v: &DVector<f64>) -> String {
    std::iter::once("y".to_string())
        .chain(v.iter().map(|x| format!("{x:e}")))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

struct Regression {
    _dir: tempfile::TempDir,
    x: String,
    y: String,
    root: PathBuf,
}

fn regression() -> Regression {
    let dir = tempfile::tempdir().unwrap();
    let (x, y) = gen_regression(40, &sparse_beta(5, 2, 1.0), NoiseKind::Gaussian, 3).unwrap();
    let xp = write(dir.path(), "X.csv", &matrix_csv(&x));
    let yp = write(dir.path(), "y.csv", &vector_csv(&y));
    Regression {
        x: xp.display().to_string(),
        y: yp.display().to_string(),
        root: dir.path().to_path_buf(),
        _dir: dir,
    }
}

#[test]
fn infer_writes_versioned_json() {
    let d = regression();
    let out = d.root.join("out.json");
    let o = ppsi(&[
        "infer",
        "--problem",
        "lasso",
        "--penalty",
        "identity",
        "--lambda",
        "1",
        "--x",
        &d.x,
        "--y",
        &d.y,
        "--sigma2",
        "1",
        "--alpha",
        "0.05",
        "--method",
        "parametric",
        "--json",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(v["schema"], 1);
    let results = v["results"].as_array().unwrap();
    assert!(!results.is_empty());
    for r in results {
        for key in [
            "j",
            "selective_p",
            "naive_p",
            "ci_lo",
            "ci_hi",
            "n_segments",
        ] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
        let p = r["selective_p"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn every_method_runs() {
    let d = regression();
    for m in ["parametric", "oc", "ds", "full-target"] {
        let o = ppsi(&[
            "infer",
            "--problem",
            "lasso",
            "--x",
            &d.x,
            "--y",
            &d.y,
            "--estimate-sigma",
            "--method",
            m,
        ]);
        assert!(
            o.status.success(),
            "{m}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = ppsi(&[
        "infer",
        "--problem",
        "lasso",
        "--lambda",
        "1",
        "--x",
        &d.x,
        "--y",
        &d.y,
        "--sigma2",
        "1",
        "--method",
        "tn-l1",
        "--lambda-high",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for p in ["enet", "nnls", "huber"] {
        let o = ppsi(&[
            "infer",
            "--problem",
            p,
            "--x",
            &d.x,
            "--y",
            &d.y,
            "--sigma2",
            "1",
        ]);
        assert!(
            o.status.success(),
            "{p}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let o = ppsi(&[
        "cv-infer",
        "--problem",
        "lasso",
        "--x",
        &d.x,
        "--y",
        &d.y,
        "--sigma2",
        "1",
        "--lambdas",
        "0.5,1,2",
        "--folds",
        "3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["lambda_selected"].is_number());
}

#[test]
fn path_of_one_dimensional_lasso_breaks_at_plus_minus_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "X.csv", "x\n1\n");
    let y = write(dir.path(), "y.csv", "y\n0.5\n");
    let eta = write(dir.path(), "eta.csv", "eta\n1\n");
    let out = dir.path().join("path.csv");
    let o = ppsi(&[
        "path",
        "--problem",
        "lasso",
        "--lambda",
        "1",
        "--x",
        x.to_str().unwrap(),
        "--y",
        y.to_str().unwrap(),
        "--sigma2",
        "1",
        "--eta",
        eta.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_path_csv(std::fs::File::open(&out).unwrap()).unwrap();
    let bp = breakpoints(&rows);
    assert_eq!(bp.len(), 2);
    assert!(
        (bp[0] + 1.0).abs() < 1e-9 && (bp[1] - 1.0).abs() < 1e-9,
        "{bp:?}"
    );
    assert_eq!(rows[1].active_set, Vec::<usize>::new());
    assert_eq!(rows[0].active_set, vec![0]);
}

#[test]
fn path_csv_round_trips_the_traced_breakpoints() {
    use ppsi_core::inference::{eta_for, fit, trace_direction, Covariance, ZRangePolicy};
    use ppsi_core::problems::{DesignMatrix, ProblemSpec};

    let d = regression();
    let out = d.root.join("path.csv");
    let o = ppsi(&[
        "path",
        "--problem",
        "lasso",
        "--lambda",
        "2",
        "--x",
        &d.x,
        "--y",
        &d.y,
        "--sigma2",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_path_csv(std::fs::File::open(&out).unwrap()).unwrap();

    let x = ppsi_harness::io::read_matrix_csv(Path::new(&d.x)).unwrap();
    let y = ppsi_harness::io::read_vector_csv(Path::new(&d.y)).unwrap();
    let spec = ProblemSpec::vanilla_lasso(DesignMatrix::new(x).unwrap(), 2.0).unwrap();
    let active = fit(&spec, &y).unwrap().active;
    let eta = eta_for(&spec, &active, active.indices[0]).unwrap().eta;
    let traced = trace_direction(
        &spec,
        &y,
        &Covariance::Isotropic(1.0),
        &eta,
        ZRangePolicy::default(),
    )
    .unwrap();
    let expected: Vec<f64> = traced
        .path
        .segments
        .iter()
        .skip(1)
        .map(|s| s.z_lo)
        .collect();
    assert_eq!(breakpoints(&rows), expected);
    assert_eq!(rows.len(), traced.path.segments.len());
}

#[test]
fn input_errors_exit_with_two_and_write_nothing() {
    let d = regression();
    let bad = write(&d.root, "bad.csv", "a,b\n1,\n");
    let out = d.root.join("never.json");
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "infer",
            "--problem",
            "lasso",
            "--x",
            bad.to_str().unwrap(),
            "--y",
            &d.y,
            "--sigma2",
            "1",
        ],
        vec![
            "infer",
            "--problem",
            "lasso",
            "--x",
            &d.x,
            "--y",
            &d.y,
            "--sigma2",
            "-1",
        ],
        vec!["infer", "--problem", "lasso", "--x", &d.x, "--y", &d.y],
        vec![
            "infer",
            "--problem",
            "lasso",
            "--x",
            &d.x,
            "--y",
            &d.y,
            "--sigma2",
            "1",
            "--alpha",
            "1",
        ],
        vec![
            "infer",
            "--problem",
            "lasso",
            "--x",
            "/nonexistent/X.csv",
            "--y",
            &d.y,
            "--sigma2",
            "1",
        ],
        vec!["infer", "--problem", "lasso", "--y", &d.y, "--sigma2", "1"],
        vec!["infer", "--problem", "ridge", "--y", &d.y, "--sigma2", "1"],
        vec![
            "infer",
            "--problem",
            "lasso",
            "--x",
            &d.x,
            "--y",
            &d.y,
            "--sigma2",
            "1",
            "--method",
            "tn-l1",
        ],
    ];
    for args in cases {
        let mut args = args.clone();
        args.extend(["--json", out.to_str().unwrap()]);
        let o = ppsi(&args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!out.exists());
    }
    let cfg = write(
        &d.root,
        "bad.cfg",
        "experiment = fpr\nproblem = lasso\nnoise = cauchy\n",
    );
    let o = ppsi(&["experiment", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn experiment_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "fpr.cfg",
        "# small run\nexperiment = fpr\nproblem = lasso\nxs = 30, 40\ntrials = 6\nrepetitions = 2\nseed = 11\n",
    );
    let run = |threads: &str| {
        let out = dir.path().join(format!("out{threads}.csv"));
        let o = ppsi(&[
            "experiment",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(out).unwrap()
    };
    let a = run("1");
    let b = run("3");
    assert_eq!(a, b);
    let rows = parse_results_csv(a.as_slice()).unwrap();
    assert!(rows.iter().any(|r| r.metric == "fpr" && r.x == 30.0));
    assert!(rows
        .iter()
        .all(|r| r.meta.get("trials").map(String::as_str) == Some("6")));
}
