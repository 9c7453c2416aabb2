//! Stability, regret and normality diagnostics over completed trajectories.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::environment::{expected_loss, LinearEnv};
use crate::error::{Error, Result};
use crate::exp4::{best_vertex, Trajectory, WeightState};
use crate::experts::PopulationMoments;
use crate::inference::Interval;
use crate::linalg::{dot, inverse_sqrt_spd, l1_distance, symmetric_eigenvalues};
use crate::normal::standard_normal_cdf;

/// `T * sum_k w*_k Sigma_k`.
pub fn sigma_star_t(moments: &PopulationMoments, w_star: &WeightState, horizon: usize) -> Result<DMatrix<f64>> {
    if w_star.len() != moments.num_experts() {
        return Err(Error::DimensionMismatch {
            expected: moments.num_experts(),
            actual: w_star.len(),
        });
    }
    let d = moments.dim();
    let mut out = DMatrix::zeros(d, d);
    for (s, &w) in moments.sigma.iter().zip(w_star.as_slice()) {
        out += s * w;
    }
    Ok(out * horizon as f64)
}

/// `Sigma*^{-1/2}` cached so many Gram matrices can be compared against the
/// same reference.
#[derive(Debug, Clone)]
pub struct StabilityReference {
    inv_sqrt: DMatrix<f64>,
}

impl StabilityReference {
    pub fn new(sigma_star: &DMatrix<f64>) -> Result<Self> {
        Ok(Self {
            inv_sqrt: inverse_sqrt_spd(sigma_star)?,
        })
    }

    /// `||Sigma*^{-1} S - I||_op`, computed as the spectral radius of the
    /// similar symmetric matrix `Sigma*^{-1/2} S Sigma*^{-1/2} - I`.
    pub fn op_error(&self, s: &DMatrix<f64>) -> Result<f64> {
        if s.shape() != self.inv_sqrt.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.inv_sqrt.nrows(),
                actual: s.nrows(),
            });
        }
        let mut b = &self.inv_sqrt * s * &self.inv_sqrt;
        b = (&b + b.transpose()) * 0.5;
        for i in 0..b.nrows() {
            b[(i, i)] -= 1.0;
        }
        Ok(symmetric_eigenvalues(&b).iter().fold(0.0, |m, l| m.max(l.abs())))
    }
}

pub fn stability_error(s: &DMatrix<f64>, sigma_star: &DMatrix<f64>) -> Result<f64> {
    StabilityReference::new(sigma_star)?.op_error(s)
}

/// `||w_bar_T - w*_T||_1`.
pub fn weight_drift(trajectory: &Trajectory, w_star: &WeightState) -> Result<f64> {
    let avg = trajectory.average_weight()?;
    if avg.len() != w_star.len() {
        return Err(Error::DimensionMismatch {
            expected: avg.len(),
            actual: w_star.len(),
        });
    }
    Ok(l1_distance(&avg, w_star.as_slice()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub sigma_star_t: DMatrix<f64>,
    pub op_error: f64,
    pub weight_drift: f64,
    pub lambda_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    /// `cumulative[t-1] = Reg(t)`.
    pub cumulative: Vec<f64>,
    pub bound_curve: Vec<f64>,
    pub w_star_vertex: Vec<f64>,
}

/// Upper bound on expected regret after `t` rounds with `K` experts,
/// `8 sqrt(t K log K) + g log(Kt) sqrt(t) + 4 g^2 log^3(Kt) / (K^2 sqrt(t))`
/// with `g = sqrt(log t)`.
pub fn regret_bound(t: usize, num_experts: usize) -> f64 {
    let (t, k) = (t as f64, num_experts as f64);
    let gamma = t.ln().max(0.0).sqrt();
    let lkt = (k * t).ln();
    8.0 * (t * k * k.ln()).sqrt() + gamma * lkt * t.sqrt() + 4.0 * gamma * gamma * lkt.powi(3) / (k * k * t.sqrt())
}

/// Cumulative regret `sum_t <g*(x_t), w_t - e_{j*}>` against the best vertex
/// of `gbar`, with `g*_k(x) = sum_a pi_k(a|x) E[loss | x, a]` computed exactly.
pub fn regret_trace(trajectory: &Trajectory, gbar: &[f64], env: &LinearEnv) -> Result<RegretReport> {
    if trajectory.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let k = gbar.len();
    let j = best_vertex(gbar);
    let na = env.num_actions();
    let mut losses = vec![0.0; na];
    let mut total = 0.0;
    let mut cumulative = Vec::with_capacity(trajectory.len());
    for r in trajectory.rounds() {
        if r.w_before.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: r.w_before.len(),
            });
        }
        for (a, l) in losses.iter_mut().enumerate() {
            *l = expected_loss(env, &r.context, a)?;
        }
        let g: Vec<f64> = r.per_expert_probs.chunks_exact(na).map(|row| dot(row, &losses)).collect();
        total += dot(&g, r.w_before.as_slice()) - g[j];
        cumulative.push(total);
    }
    let bound_curve = (1..=trajectory.len()).map(|t| regret_bound(t, k)).collect();
    let mut w_star_vertex = vec![0.0; k];
    w_star_vertex[j] = 1.0;
    Ok(RegretReport {
        cumulative,
        bound_curve,
        w_star_vertex,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalitySummary {
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub ks_distance: f64,
    pub n_trials: usize,
}

/// Exact one-sample Kolmogorov-Smirnov distance to `N(0, 1)`.
pub fn ks_distance(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0, |d, (i, &x)| {
        let f = standard_normal_cdf(x);
        d.max((i + 1) as f64 / n - f).max(f - i as f64 / n)
    })
}

/// Neumaier summation.
fn compensated_sum(values: &[f64]) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

pub fn normality_summary(pivots: &[f64]) -> Result<NormalitySummary> {
    let n = pivots.len();
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "normality summary needs at least 2 values, got {n}"
        )));
    }
    let mean = compensated_sum(pivots) / n as f64;
    // Deviations are taken from the first value so constant input gives exactly 0.
    let shifted: Vec<f64> = pivots.iter().map(|p| p - pivots[0]).collect();
    let shift_mean = compensated_sum(&shifted) / n as f64;
    let variance = shifted.iter().map(|p| (p - shift_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(NormalitySummary {
        mean,
        variance,
        ks_distance: ks_distance(pivots),
        n_trials: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Wald,
    Aps,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Wald => "wald",
            Method::Aps => "aps",
        }
    }
}

/// Everything one Monte-Carlo trial reports.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    /// Unit direction `a`.
    pub direction: Vec<f64>,
    /// `a^T beta*`.
    pub target: f64,
    pub beta_hat: Vec<f64>,
    pub sigma_hat: f64,
    pub pivot: f64,
    /// One interval per alpha, in grid order.
    pub wald: Vec<Interval>,
    pub aps: Vec<Interval>,
    pub final_regret: f64,
    pub stability_error: f64,
    pub weight_drift: f64,
}

impl TrialSummary {
    pub fn intervals(&self, method: Method) -> &[Interval] {
        match method {
            Method::Wald => &self.wald,
            Method::Aps => &self.aps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: Method,
    pub alpha: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    /// Mean full width `upper - lower`.
    pub mean_width: f64,
    pub n_trials: usize,
}

/// Empirical coverage, binomial standard error and mean width for each
/// method and alpha.
pub fn coverage_table(trials: &[TrialSummary], alphas: &[f64]) -> Result<Vec<CoverageRow>> {
    if trials.is_empty() {
        return Err(Error::InvalidParameter("coverage table needs at least one trial".into()));
    }
    let mut rows = Vec::with_capacity(2 * alphas.len());
    for method in [Method::Wald, Method::Aps] {
        for &alpha in alphas {
            let (mut hits, mut width) = (0usize, 0.0);
            for t in trials {
                let iv = t
                    .intervals(method)
                    .iter()
                    .find(|iv| iv.alpha == alpha)
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("trial {} has no interval at alpha {alpha}", t.trial))
                    })?;
                hits += usize::from(iv.contains(t.target));
                width += iv.upper() - iv.lower();
            }
            let n = trials.len() as f64;
            let p = hits as f64 / n;
            rows.push(CoverageRow {
                method,
                alpha,
                coverage: p,
                coverage_se: (p * (1.0 - p) / n).sqrt(),
                mean_width: width / n,
                n_trials: trials.len(),
            });
        }
    }
    Ok(rows)
}
