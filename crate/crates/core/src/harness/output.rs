//! Result files.
//!
//! * `trials.csv`: one row per trial with the target `a^T beta*`, estimates,
//!   diagnostics and, per alpha, both intervals and their containment flags.
//!   `direction` and `beta_hat` are `;`-separated lists.
//! * `coverage.csv`: `method,alpha,coverage,coverage_se,mean_width,n_trials`.
//! * `histogram.csv`: `trial,pivot`.
//! * `regret.csv`: `t,mean_regret,bound`.
//! * `stability.csv`: `trial,op_error,weight_drift`.
//! * `manifest.json`: resolved config, seeds, digests of the random draws and
//!   the crate version.
//!
//! Floats are written in shortest round-trip form, so every stored value
//! parses back to the exact number used in the computation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::diagnostics::Method;
use crate::error::{Error, Result};
use crate::seeds::{stream_id, Purpose};

use super::run::ExperimentResult;

pub const COVERAGE_HEADER: &str = "method,alpha,coverage,coverage_se,mean_width,n_trials";
pub const HISTOGRAM_HEADER: &str = "trial,pivot";
pub const REGRET_HEADER: &str = "t,mean_regret,bound";
pub const STABILITY_HEADER: &str = "trial,op_error,weight_drift";

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";")
}

pub fn trials_csv(result: &ExperimentResult) -> String {
    let mut out = String::from(
        "trial,target,sigma_hat,pivot,final_regret,op_error,weight_drift",
    );
    for alpha in &result.config.inference.alphas {
        for m in [Method::Wald, Method::Aps] {
            let n = m.name();
            write!(out, ",{n}_lower_{alpha:?},{n}_upper_{alpha:?},{n}_covers_{alpha:?}").unwrap();
        }
    }
    out.push_str(",direction,beta_hat\n");
    for t in &result.trials {
        write!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?}",
            t.trial, t.target, t.sigma_hat, t.pivot, t.final_regret, t.stability_error, t.weight_drift
        )
        .unwrap();
        for i in 0..result.config.inference.alphas.len() {
            for m in [Method::Wald, Method::Aps] {
                let iv = t.intervals(m)[i];
                write!(out, ",{:?},{:?},{}", iv.lower(), iv.upper(), u8::from(iv.contains(t.target))).unwrap();
            }
        }
        writeln!(out, ",{},{}", join(&t.direction), join(&t.beta_hat)).unwrap();
    }
    out
}

pub fn coverage_csv(result: &ExperimentResult) -> String {
    let mut out = format!("{COVERAGE_HEADER}\n");
    for r in &result.coverage {
        writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{}",
            r.method.name(),
            r.alpha,
            r.coverage,
            r.coverage_se,
            r.mean_width,
            r.n_trials
        )
        .unwrap();
    }
    out
}

pub fn histogram_csv(result: &ExperimentResult) -> String {
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for t in &result.trials {
        writeln!(out, "{},{:?}", t.trial, t.pivot).unwrap();
    }
    out
}

pub fn regret_csv(result: &ExperimentResult) -> String {
    let mut out = format!("{REGRET_HEADER}\n");
    for (i, (m, b)) in result.mean_regret.iter().zip(&result.regret_bound).enumerate() {
        writeln!(out, "{},{m:?},{b:?}", i + 1).unwrap();
    }
    out
}

pub fn stability_csv(result: &ExperimentResult) -> String {
    let mut out = format!("{STABILITY_HEADER}\n");
    for t in &result.trials {
        writeln!(out, "{},{:?},{:?}", t.trial, t.stability_error, t.weight_drift).unwrap();
    }
    out
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The manifest leaves out `output_dir` and `run.worker_count`: they decide
/// where and how fast results are produced, not what they are.
pub fn manifest_json(result: &ExperimentResult) -> Result<String> {
    let mut config = serde_json::to_value(&result.config).map_err(|e| Error::Parse(e.to_string()))?;
    if let Some(obj) = config.as_object_mut() {
        obj.remove("output_dir");
        if let Some(run) = obj.get_mut("run").and_then(|r| r.as_object_mut()) {
            run.remove("worker_count");
        }
    }
    let beta_bytes: Vec<u8> = result.beta_star.iter().flat_map(|v| v.to_le_bytes()).collect();
    let moments = result.moments.as_ref().map(|m| {
        json!({
            "digest": m.digest(),
            "n_samples": m.n_samples,
            "min_eigenvalues": m.min_eigenvalues(),
            "lambda_floor": m.lambda_floor(),
            "gbar": m.gbar,
        })
    });
    let seeds = json!({
        "master_seed": result.config.master_seed,
        "generator": "chacha8",
        "streams": {
            "environment": stream_id(Purpose::Environment, 0),
            "experts": stream_id(Purpose::Experts, 0),
            "moments": stream_id(Purpose::Moments, 0),
            "trial_0": stream_id(Purpose::Trial, 0),
            "direction": stream_id(Purpose::Direction, 0),
        },
    });
    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seeds": seeds,
        "beta_star_sha256": sha256_hex(&beta_bytes),
        "experts_sha256": result.experts_text.as_ref().map(|t| sha256_hex(t.as_bytes())),
        "moments": moments,
        "w_star": result.w_star.as_ref().map(|w| w.as_slice().to_vec()),
        "normality": result.normality,
        "n_trials": result.trials.len(),
    });
    let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// Writes every result file into `dir`, creating it if needed.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        ("trials.csv", trials_csv(result)),
        ("coverage.csv", coverage_csv(result)),
        ("histogram.csv", histogram_csv(result)),
        ("regret.csv", regret_csv(result)),
        ("stability.csv", stability_csv(result)),
        ("manifest.json", manifest_json(result)?),
    ];
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
