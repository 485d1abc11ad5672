use std::fs;
use std::path::Path;
use std::process::Command;

use serde_json::{json, Value};
use spike_limits::cli::{main_with_args, EXIT_CHECKS_FAILED};

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn invoke(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("spike-limits").chain(args.iter().copied());
    let code = main_with_args(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn write_json(dir: &Path, name: &str, value: &Value) -> String {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec(value).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

fn delta_model(p: usize, alpha: f64, mult: usize) -> Value {
    json!({
        "p": p,
        "mode": "covariance",
        "spikes": [{"alpha": alpha, "mult": mult}],
        "bulk": vec![1.0; p - mult],
        "structure": "identity_embedding",
    })
}

#[test]
fn limits_reports_plugin_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "model.json", &delta_model(200, 4.0, 1));
    let out = invoke(&["limits", "--config", &cfg, "--n", "400"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    let spike = &v["spikes"][0];
    assert!((spike["phi"].as_f64().unwrap() - 4.666667).abs() < 1e-6);
    assert!((spike["l0"].as_f64().unwrap() - 0.809524).abs() < 1e-6);
    assert_eq!(v["kind"], "covariance_matrix");
}

#[test]
fn below_transition_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "model.json", &delta_model(100, 1.2, 1));
    let out = invoke(&["limits", "--config", &cfg, "--n", "200"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("spike 1"), "{}", out.stderr);
}

#[test]
fn below_transition_aborts_before_simulating() {
    let dir = tempfile::tempdir().unwrap();
    let exp =
        json!({"model": delta_model(100, 1.2, 1), "n": 200, "reps": 50, "kinds": ["covariance"]});
    let cfg = write_json(dir.path(), "exp.json", &exp);
    let out_dir = dir.path().join("out");
    let out = invoke(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.code, 2);
    assert!(!out_dir.join("records.csv").exists());
}

#[test]
fn input_errors_exit_one() {
    assert_eq!(invoke(&["frobnicate"]).code, 1);
    assert_eq!(
        invoke(&["limits", "--config", "/nonexistent/model.json", "--n", "10"]).code,
        1
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(
        dir.path(),
        "bad.json",
        &json!({"p": 3, "mode": "covariance"}),
    );
    assert_eq!(invoke(&["limits", "--config", &cfg, "--n", "10"]).code, 1);
    let exp = json!({"model": delta_model(20, 4.0, 1), "n": 40, "reps": 1});
    let cfg = write_json(dir.path(), "exp.json", &exp);
    assert_eq!(
        invoke(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            dir.path().to_str().unwrap()
        ])
        .code,
        1
    );
}

#[test]
fn help_exits_zero() {
    let out = invoke(&["--help"]);
    assert_eq!(out.code, 0);
    assert!(out.stdout.contains("verify"));
}

#[test]
fn two_reps_two_kinds_give_four_records() {
    let dir = tempfile::tempdir().unwrap();
    let exp = json!({
        "model": {"p": 20, "mode": "correlation", "spikes": [{"alpha": 6.0, "mult": 1}],
                  "bulk": vec![14.0 / 19.0; 19], "structure": "equal_weight_leading"},
        "n": 40,
        "reps": 2,
        "kinds": ["covariance_matrix", "correlation_matrix"],
        "projections": ["V1"],
    });
    let cfg = write_json(dir.path(), "exp.json", &exp);
    let out = invoke(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let text = fs::read_to_string(dir.path().join("records.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "rep,kind,lambda_1,theta_1,proj_1,seed");
    assert_eq!(lines.len(), 2 + 4);
    assert!(lines[2].starts_with("0,covariance_matrix,"));
    assert!(lines[3].starts_with("0,correlation_matrix,"));
    assert!(lines[5].starts_with("1,correlation_matrix,"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let exp = json!({
        "model": delta_model(30, 5.0, 1),
        "n": 90,
        "reps": 40,
        "kinds": ["covariance"],
        "dist": "laplace",
        "projections": ["V1", "e2"],
        "master_seed": 11,
    });
    let cfg = write_json(dir.path(), "exp.json", &exp);
    let read_all = |sub: &str| {
        let out = dir.path().join(sub);
        let code = invoke(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]).code;
        assert!(code == 0 || code == EXIT_CHECKS_FAILED);
        ["records.csv", "report.json", "plot_data.csv"].map(|f| fs::read(out.join(f)).unwrap())
    };
    assert_eq!(read_all("a"), read_all("b"));
    let out = dir.path().join("c");
    invoke(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "12",
    ]);
    assert_ne!(fs::read(out.join("records.csv")).unwrap(), read_all("a")[0]);
}

#[test]
fn too_few_records_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let exp =
        json!({"model": delta_model(20, 4.0, 1), "n": 60, "reps": 10, "kinds": ["covariance"]});
    let cfg = write_json(dir.path(), "exp.json", &exp);
    let out = invoke(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, 3, "{}", out.stderr);
}

#[test]
fn failed_checks_exit_five() {
    // At alpha of order p the correlation eigenvector concentrates faster than
    // its fixed-spike limit predicts.
    let dir = tempfile::tempdir().unwrap();
    let exp = json!({
        "model": {"p": 100, "mode": "correlation", "spikes": [{"alpha": 50.5, "mult": 1}],
                  "bulk": vec![0.5; 99], "structure": "equal_weight_leading"},
        "n": 200,
        "reps": 60,
        "kinds": ["correlation"],
        "projections": ["V1"],
        "master_seed": 3,
    });
    let cfg = write_json(dir.path(), "exp.json", &exp);
    let out = invoke(&[
        "verify",
        "--config",
        &cfg,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.code, EXIT_CHECKS_FAILED, "{}", out.stderr);
    assert!(out.stderr.contains("FAIL"));
    let report: Value =
        serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn orthogonal_projection_has_zero_limit_and_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(dir.path(), "model.json", &delta_model(50, 4.0, 1));
    let out = invoke(&[
        "variance",
        "--config",
        &cfg,
        "--n",
        "100",
        "--projection",
        "orthogonal",
        "--dist",
        "rademacher",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert!(v["limit"].as_f64().unwrap().abs() < 1e-12);
    assert!(v["sigma2"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["terms"].as_object().unwrap().len(), 6);
}

#[test]
fn variance_terms_sum_to_sigma2() {
    let dir = tempfile::tempdir().unwrap();
    let model = json!({
        "p": 40, "mode": "correlation", "spikes": [{"alpha": 9.0, "mult": 1}, {"alpha": 4.0, "mult": 1}],
        "bulk": vec![27.0 / 38.0; 38], "structure": "random_orthogonal", "seed": 5,
    });
    let cfg = write_json(dir.path(), "model.json", &model);
    let out = invoke(&[
        "variance",
        "--config",
        &cfg,
        "--n",
        "120",
        "--kind",
        "correlation",
        "--projection",
        "e3",
    ]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    let terms = v["terms"].as_object().unwrap();
    assert_eq!(terms.len(), 21);
    let sum: f64 = terms
        .iter()
        .map(|(k, x)| {
            if k.as_bytes()[1] == k.as_bytes()[2] {
                x.as_f64().unwrap()
            } else {
                2.0 * x.as_f64().unwrap()
            }
        })
        .sum();
    assert!((sum - v["sigma2"].as_f64().unwrap()).abs() < 1e-12);
}

#[test]
fn normalize_effect_reports_negative_sign() {
    let dir = tempfile::tempdir().unwrap();
    let model = json!({
        "p": 100, "mode": "correlation", "spikes": [{"alpha": 50.5, "mult": 1}],
        "bulk": vec![0.5; 99], "structure": "equal_weight_leading",
    });
    let cfg = write_json(dir.path(), "model.json", &model);
    let out = invoke(&["normalize-effect", "--config", &cfg]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert!((v["effective_term"].as_f64().unwrap() + 0.7525).abs() < 1e-9);
    assert_eq!(v["sign"], "negative");
    assert!(v.get("full_delta").is_none());
    let out = invoke(&["normalize-effect", "--config", &cfg, "--n", "200"]);
    let v: Value = serde_json::from_str(&out.stdout).unwrap();
    assert!(v["full_delta"].as_f64().unwrap() < 0.0);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_spike-limits");
    let status = Command::new(bin).arg("--version").output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = Command::new(bin)
        .args(["limits", "--n", "3"])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}
