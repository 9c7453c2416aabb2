use std::process::Command;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_exp4stab"));
    c.env_remove("EXP4STAB_WORKERS");
    c
}

fn write_config(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, body).unwrap();
    p
}

const SMALL: &str = "[problem]\nhorizon = 300\nnum_experts = 3\nnum_actions = 2\ncontext_dim = 3\n[run]\nn_runs = 6\nn_moment_samples = 5000\n";

#[test]
fn run_writes_all_files_with_exact_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--workers", "2", "--seed", "5"])
        .status()
        .unwrap();
    assert!(status.success());
    let first_line = |name: &str| {
        std::fs::read_to_string(out.join(name))
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string()
    };
    assert_eq!(first_line("coverage.csv"), "method,alpha,coverage,coverage_se,mean_width,n_trials");
    assert_eq!(first_line("histogram.csv"), "trial,pivot");
    assert_eq!(first_line("regret.csv"), "t,mean_regret,bound");
    assert_eq!(first_line("stability.csv"), "trial,op_error,weight_drift");
    assert!(first_line("trials.csv").starts_with("trial,target,"));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["master_seed"], 5);
    assert_eq!(std::fs::read_to_string(out.join("regret.csv")).unwrap().lines().count(), 301);
}

#[test]
fn worker_env_var_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(&a).status().unwrap().success());
    assert!(bin()
        .env("EXP4STAB_WORKERS", "3")
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .status()
        .unwrap()
        .success());
    for f in ["trials.csv", "coverage.csv", "histogram.csv", "regret.csv", "stability.csv", "manifest.json"] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn bad_config_fails_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[inference]\nalphas = [1.5]\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn zero_horizon_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[problem]\nhorizon = 0\n[run]\nn_runs = 1\n");
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn ols_below_dimension_suggests_ridge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nhorizon = 20\n[run]\nn_runs = 1\nn_moment_samples = 2000\n",
    );
    let out = bin().args(["run", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("o")).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ridge"));
}

#[test]
fn moments_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = bin().args(["moments", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["gbar"].as_array().unwrap().len(), 3);
    assert_eq!(v["sigma"].as_array().unwrap().len(), 3);
    assert!(v["lambda_floor"].as_f64().is_some());
}

#[test]
fn selftest_passes() {
    let out = bin().args(["selftest", "--instances", "200"]).output().unwrap();
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
