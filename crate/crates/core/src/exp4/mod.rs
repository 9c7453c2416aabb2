//! Penalized EXP4.
//!
//! The learner keeps mixture weights `w_t` on the floored simplex over `K`
//! experts. Each round it plays `a_t ~ Q_t = sum_k w_{t,k} pi_k(.|x_t)`,
//! forms the importance-weighted loss estimate
//! `g_hat_k = loss * pi_k(a_t|x_t) / Q_t(a_t|x_t)`, takes the multiplicative
//! step `w+ = w * exp(-eta * (g_hat + lambda * grad R(w)))` and projects
//! back with the exact KL projection.
//!
//! The penalty is `R(w) = sum w_k (log w_k + log(1/eps) - 1)`, so
//! `grad R(w)_k = log w_k + log(1/eps)`.

pub mod bregman;
mod projection;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::{feature, realize_loss, sample_context, Context, FeatureVector, LinearEnv};
use crate::error::{Error, Result};
use crate::experts::{mixture_from_flat, ExpertSet};
use crate::linalg::dot;

pub use bregman::bregman_div_phi;
use projection::{check_floor, water_fill_log};

/// Which form of the multiplicative update to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `w+ = w exp(-eta (g_hat + lambda grad R))`: the mirror step the
    /// regret and stability analysis is carried out for.
    #[default]
    Analysis,
    /// `w+ = w exp(-eta g_hat - lambda grad R)`: step size on the loss
    /// estimate only.
    Algorithm1,
}

/// Count used in the step-size denominator `eta = sqrt(log K / (n T))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EtaDenominator {
    /// `n = A`, number of actions.
    #[default]
    A,
    /// `n = K`, number of experts.
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exp4Params {
    pub eta: f64,
    pub lambda_pen: f64,
    pub eps_floor: f64,
    pub num_experts: usize,
    pub horizon: usize,
    pub gamma_t: f64,
    pub update_rule: UpdateRule,
}

impl Exp4Params {
    /// `eps = 1/(K T)`, `gamma_T = sqrt(log T)`, `lambda = gamma_T / sqrt(T)`,
    /// `eta = sqrt(log K / (n T))` with `n` chosen by `eta_denominator`.
    ///
    /// `T = 0` is treated as `T = 1` for the hyperparameters only.
    pub fn defaults(
        num_experts: usize,
        num_actions: usize,
        horizon: usize,
        eta_denominator: EtaDenominator,
    ) -> Result<Self> {
        if num_experts == 0 || num_actions == 0 {
            return Err(Error::InvalidParameter(
                "need at least one expert and one action".into(),
            ));
        }
        let t = horizon.max(1) as f64;
        let k = num_experts as f64;
        let n = match eta_denominator {
            EtaDenominator::A => num_actions as f64,
            EtaDenominator::K => k,
        };
        let gamma_t = t.ln().sqrt();
        Ok(Self {
            eta: (k.ln() / (n * t)).sqrt(),
            lambda_pen: gamma_t / t.sqrt(),
            eps_floor: 1.0 / (k * t),
            num_experts,
            horizon,
            gamma_t,
            update_rule: UpdateRule::Analysis,
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_floor(self.num_experts, self.eps_floor)?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta = {}", self.eta)));
        }
        if !(self.lambda_pen >= 0.0 && self.lambda_pen.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda_pen = {}",
                self.lambda_pen
            )));
        }
        Ok(())
    }
}

/// Mixture weights on the floored simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState(Vec<f64>);

impl WeightState {
    /// Checks `|sum - 1| <= 1e-12` and `min >= eps - 1e-12`.
    pub fn new(w: Vec<f64>, eps_floor: f64) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if w.is_empty() || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::NotInFlooredSimplex(format!("sum = {sum}")));
        }
        if let Some(v) = w.iter().find(|&&v| !(v >= eps_floor - 1e-12)) {
            return Err(Error::NotInFlooredSimplex(format!(
                "entry {v} below floor {eps_floor}"
            )));
        }
        Ok(Self(w))
    }

    pub fn uniform(num_experts: usize) -> Self {
        Self(vec![1.0 / num_experts as f64; num_experts])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Everything observed and computed in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub context: Context,
    /// Row-major `K x A`.
    pub per_expert_probs: Vec<f64>,
    pub mixture: Vec<f64>,
    pub action: usize,
    pub loss: f64,
    pub feature: FeatureVector,
    pub w_before: WeightState,
    pub g_hat: Vec<f64>,
    /// `g_hat + lambda * grad R(w_before)`.
    pub g_tilde: Vec<f64>,
}

impl RoundRecord {
    pub fn num_actions(&self) -> usize {
        self.mixture.len()
    }

    /// `pi_k(a | x)` for every expert.
    pub fn probs_at(&self, action: usize) -> Vec<f64> {
        let na = self.num_actions();
        self.per_expert_probs
            .chunks_exact(na)
            .map(|row| row[action])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    rounds: Vec<RoundRecord>,
    final_weight: WeightState,
    weight_sum: Vec<f64>,
}

impl Trajectory {
    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// `w_{T+1}`, the weights after the last update.
    pub fn final_weight(&self) -> &WeightState {
        &self.final_weight
    }

    /// Weights in force after round `t` (0-based), i.e. `w_{t+2}` in 1-based
    /// round numbering.
    pub fn weight_after(&self, t: usize) -> &[f64] {
        match self.rounds.get(t + 1) {
            Some(r) => r.w_before.as_slice(),
            None => self.final_weight.as_slice(),
        }
    }

    /// `w_bar_T = (1/T) sum_{t=1}^T w_t`.
    pub fn average_weight(&self) -> Result<Vec<f64>> {
        if self.rounds.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        let t = self.rounds.len() as f64;
        Ok(self.weight_sum.iter().map(|s| s / t).collect())
    }

    /// Row per round: `t,action,loss,w_1,...,w_K` with 1-based `t` and the
    /// weights used to choose the action.
    pub fn to_csv(&self) -> String {
        let k = self.final_weight.len();
        let mut out = String::from("t,action,loss");
        for i in 1..=k {
            out.push_str(&format!(",w_{i}"));
        }
        out.push('\n');
        for (t, r) in self.rounds.iter().enumerate() {
            out.push_str(&format!("{},{},{:?}", t + 1, r.action, r.loss));
            for w in r.w_before.as_slice() {
                out.push_str(&format!(",{w:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// `g_hat_k = loss * pi_k(a|x) / Q(a|x)`.
pub fn ips_estimate(loss: f64, pi_at_a: &[f64], q_at_a: f64) -> Result<Vec<f64>> {
    if !(q_at_a > 0.0) {
        return Err(Error::NonPositivePropensity(q_at_a));
    }
    Ok(pi_at_a.iter().map(|p| loss * p / q_at_a).collect())
}

/// `grad R(w)_k = log w_k + log(1/eps)`.
pub fn grad_penalty(w: &[f64], eps_floor: f64) -> Vec<f64> {
    let shift = -eps_floor.ln();
    w.iter().map(|v| v.ln() + shift).collect()
}

/// `R(w) = sum w_k (log w_k + log(1/eps) - 1)`.
pub fn penalty(w: &[f64], eps_floor: f64) -> f64 {
    let shift = -eps_floor.ln();
    w.iter().map(|v| v * (v.ln() + shift - 1.0)).sum()
}

/// `||g||^2_{w,*} = sum w_k g_k^2`.
pub fn local_dual_norm_sq(g: &[f64], w: &[f64]) -> f64 {
    g.iter().zip(w).map(|(gk, wk)| wk * gk * gk).sum()
}

/// Log of the intermediate weights and the penalized gradient `g_tilde`.
fn log_step(w: &[f64], g_hat: &[f64], params: &Exp4Params) -> Result<(Vec<f64>, Vec<f64>)> {
    if g_hat.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            actual: g_hat.len(),
        });
    }
    let grad_r = grad_penalty(w, params.eps_floor);
    let mut log_plus = Vec::with_capacity(w.len());
    let mut g_tilde = Vec::with_capacity(w.len());
    for ((wk, gk), rk) in w.iter().zip(g_hat).zip(&grad_r) {
        let exponent = match params.update_rule {
            UpdateRule::Analysis => -params.eta * (gk + params.lambda_pen * rk),
            UpdateRule::Algorithm1 => -params.eta * gk - params.lambda_pen * rk,
        };
        if !exponent.is_finite() {
            return Err(Error::ExponentOutOfRange(exponent));
        }
        log_plus.push(wk.ln() + exponent);
        g_tilde.push(gk + params.lambda_pen * rk);
    }
    Ok((log_plus, g_tilde))
}

/// Intermediate weights `w+` before projection.
pub fn multiplicative_step(w: &WeightState, g_hat: &[f64], params: &Exp4Params) -> Result<Vec<f64>> {
    let (log_plus, _) = log_step(w.as_slice(), g_hat, params)?;
    log_plus
        .into_iter()
        .map(|l| {
            let v = l.exp();
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::ExponentOutOfRange(l))
            }
        })
        .collect()
}

/// `argmin_{w in floored simplex} D_phi(w, w_plus)`.
pub fn kl_project_eps_simplex(w_plus: &[f64], eps_floor: f64) -> Result<WeightState> {
    if let Some(index) = w_plus.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveEntry {
            index,
            value: w_plus[index],
        });
    }
    let logs: Vec<f64> = w_plus.iter().map(|v| v.ln()).collect();
    water_fill_log(&logs, eps_floor).map(WeightState)
}

/// Minimizer of `<gbar, w> + lambda R(w)` over the floored simplex:
/// `w_k = max(eps, gamma exp(-gbar_k / lambda))`.
///
/// With `lambda = 0` the objective is linear; the floored vertex is returned
/// when the minimizing coordinate is unique, otherwise
/// [`Error::NonUniqueOptimum`].
pub fn penalized_opt_weight(gbar: &[f64], params: &Exp4Params) -> Result<WeightState> {
    if gbar.len() != params.num_experts {
        return Err(Error::DimensionMismatch {
            expected: params.num_experts,
            actual: gbar.len(),
        });
    }
    check_floor(gbar.len(), params.eps_floor)?;
    if params.lambda_pen == 0.0 {
        let j = best_vertex(gbar);
        if gbar.iter().filter(|&&g| g == gbar[j]).count() > 1 {
            return Err(Error::NonUniqueOptimum);
        }
        return Ok(smoothed_vertex(j, gbar.len(), params.eps_floor));
    }
    let logs: Vec<f64> = gbar.iter().map(|g| -g / params.lambda_pen).collect();
    water_fill_log(&logs, params.eps_floor).map(WeightState)
}

/// Index of the smallest entry, lowest index on ties.
pub fn best_vertex(gbar: &[f64]) -> usize {
    let mut best = 0;
    for (i, g) in gbar.iter().enumerate() {
        if *g < gbar[best] {
            best = i;
        }
    }
    best
}

/// `(eps, ..., 1 - (K-1) eps, ..., eps)` with the large entry at `j`.
pub fn smoothed_vertex(j: usize, num_experts: usize, eps_floor: f64) -> WeightState {
    let mut w = vec![eps_floor; num_experts];
    w[j] = 1.0 - (num_experts - 1) as f64 * eps_floor;
    WeightState(w)
}

fn sample_action<R: Rng + ?Sized>(q: &[f64], rng: &mut R) -> usize {
    let total: f64 = q.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (a, p) in q.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    q.iter().rposition(|&p| p > 0.0).unwrap_or(q.len() - 1)
}

/// Runs `params.horizon` rounds of penalized EXP4 starting from uniform weights.
pub fn run_episode<R: Rng + ?Sized>(
    env: &LinearEnv,
    experts: &ExpertSet,
    params: &Exp4Params,
    rng: &mut R,
) -> Result<Trajectory> {
    params.validate()?;
    let k = experts.len();
    if params.num_experts != k {
        return Err(Error::DimensionMismatch {
            expected: params.num_experts,
            actual: k,
        });
    }
    let na = env.num_actions();
    if experts.num_actions() != na {
        return Err(Error::DimensionMismatch {
            expected: na,
            actual: experts.num_actions(),
        });
    }
    if experts.context_dim() != env.context_dim() {
        return Err(Error::DimensionMismatch {
            expected: env.context_dim(),
            actual: experts.context_dim(),
        });
    }

    let mut w = WeightState::uniform(k);
    let mut weight_sum = vec![0.0; k];
    let mut rounds = Vec::with_capacity(params.horizon);
    for _ in 0..params.horizon {
        let x = sample_context(env, rng);
        let mut probs = vec![0.0; k * na];
        experts.all_probs_into(x.as_slice(), &mut probs);
        let mut q = vec![0.0; na];
        mixture_from_flat(w.as_slice(), &probs, na, &mut q);
        let action = sample_action(&q, rng);
        let loss = realize_loss(env, &x, action, rng)?;
        let z = feature(env, &x, action)?;
        let pi_at_a: Vec<f64> = probs.chunks_exact(na).map(|row| row[action]).collect();
        let g_hat = ips_estimate(loss, &pi_at_a, q[action])?;
        let (log_plus, g_tilde) = log_step(w.as_slice(), &g_hat, params)?;
        let next = WeightState(water_fill_log(&log_plus, params.eps_floor)?);

        for (s, v) in weight_sum.iter_mut().zip(w.as_slice()) {
            *s += v;
        }
        rounds.push(RoundRecord {
            context: x,
            per_expert_probs: probs,
            mixture: q,
            action,
            loss,
            feature: z,
            w_before: std::mem::replace(&mut w, next),
            g_hat,
            g_tilde,
        });
    }
    Ok(Trajectory {
        rounds,
        final_weight: w,
        weight_sum,
    })
}

/// Per-round slack of the one-step mirror-descent inequality
///
/// `<eta g_tilde_t, w_t - y> <= D(y, w_t) - D(y, w_{t+1})
///     + eta^2 ||g_hat_t||^2_{w_t,*} + eta^2 lambda^2 ||grad R(w_t)||^2_{w_t,*}`,
///
/// returned as right-hand side minus left-hand side for every round.
pub fn master_inequality_slack(
    trajectory: &Trajectory,
    params: &Exp4Params,
    y: &[f64],
) -> Result<Vec<f64>> {
    let (eta, lambda) = (params.eta, params.lambda_pen);
    trajectory
        .rounds()
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let w = r.w_before.as_slice();
            let w_next = trajectory.weight_after(t);
            let diff: Vec<f64> = w.iter().zip(y).map(|(a, b)| a - b).collect();
            let lhs = eta * dot(&r.g_tilde, &diff);
            let grad_r = grad_penalty(w, params.eps_floor);
            let rhs = bregman_div_phi(y, w)? - bregman_div_phi(y, w_next)?
                + eta * eta * local_dual_norm_sq(&r.g_hat, w)
                + eta * eta * lambda * lambda * local_dual_norm_sq(&grad_r, w);
            Ok(rhs - lhs)
        })
        .collect()
}
