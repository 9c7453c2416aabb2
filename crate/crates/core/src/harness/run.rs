//! Deterministic parallel Monte-Carlo runner.
//!
//! Trial `i` draws its direction (unless frozen) and everything inside the
//! episode from stream `(master_seed, Trial, i)`. Trials run on a rayon pool
//! of `worker_count` threads and are collected by index, so results do not
//! depend on the number of workers or on completion order.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diagnostics::{
    coverage_table, normality_summary, regret_bound, regret_trace, sigma_star_t, weight_drift,
    CoverageRow, NormalitySummary, StabilityReference, TrialSummary,
};
use crate::environment::{unit_gaussian, LinearEnv};
use crate::error::{Error, Result};
use crate::exp4::{penalized_opt_weight, run_episode, Exp4Params, Trajectory, WeightState};
use crate::experts::{estimate_moments_from, ExpertSet, PopulationMoments};
use crate::inference::{
    aps_intervals, ols, ridge, sigma_hat, standardized_stat, wald_intervals, EstimateBundle,
    EstimatorKind, GramAccumulator,
};
use crate::linalg::dot;
use crate::seeds::{stream_rng, Purpose, SimRng};

use super::config::{ExperimentConfig, ExpertFamily};

/// Everything shared by the trials of one expert draw.
#[derive(Debug, Clone)]
pub struct ExpertContext {
    pub experts: ExpertSet,
    pub moments: PopulationMoments,
    /// Minimizer of `<gbar, w> + lambda R(w)` over the floored simplex.
    pub w_star: WeightState,
    pub sigma_star: DMatrix<f64>,
    pub stability: StabilityReference,
}

#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub config: ExperimentConfig,
    pub env: LinearEnv,
    pub params: Exp4Params,
    /// Shared experts, or `None` when experts are redrawn per trial.
    pub shared: Option<ExpertContext>,
    /// Direction used by every trial when directions are frozen.
    pub frozen_direction: Option<Vec<f64>>,
}

/// Draws `beta*` from stream `(seed, Environment, 0)`.
pub fn build_env(cfg: &ExperimentConfig) -> Result<LinearEnv> {
    let mut rng = stream_rng(cfg.master_seed, Purpose::Environment, 0);
    LinearEnv::random(
        cfg.problem.num_actions,
        cfg.problem.context_dim,
        cfg.noise_law(),
        cfg.master_seed,
        &mut rng,
    )
}

/// Draws the expert set from stream `(seed, Experts, index)`.
pub fn build_experts(cfg: &ExperimentConfig, index: u64) -> Result<ExpertSet> {
    let mut rng = stream_rng(cfg.master_seed, Purpose::Experts, index);
    let p = &cfg.problem;
    let e = &cfg.experts;
    match e.family {
        ExpertFamily::Softmax => ExpertSet::softmax(
            p.num_experts,
            p.num_actions,
            p.context_dim,
            e.softmax_variance,
            e.include_uniform,
            &mut rng,
        ),
        ExpertFamily::Neural => ExpertSet::neural(
            p.num_experts,
            p.num_actions,
            p.context_dim,
            &cfg.neural_init(),
            e.include_uniform,
            &mut rng,
        ),
    }
}

/// Moment shards for expert draw `index` start at stream `index << 32`.
pub fn build_expert_context(
    cfg: &ExperimentConfig,
    env: &LinearEnv,
    params: &Exp4Params,
    index: u64,
) -> Result<ExpertContext> {
    let experts = build_experts(cfg, index)?;
    let moments = estimate_moments_from(
        &experts,
        env,
        cfg.run.n_moment_samples,
        cfg.master_seed,
        index << 32,
    )?;
    let floor = moments.lambda_floor();
    if floor <= 1e-6 {
        log::warn!("smallest eigenvalue of the expert second moments is {floor:.3e}");
    }
    let w_star = penalized_opt_weight(&moments.gbar, params)?;
    let sigma_star = sigma_star_t(&moments, &w_star, params.horizon)?;
    let stability = StabilityReference::new(&sigma_star)?;
    Ok(ExpertContext {
        experts,
        moments,
        w_star,
        sigma_star,
        stability,
    })
}

pub fn build_setup(cfg: &ExperimentConfig) -> Result<ExperimentSetup> {
    cfg.validate()?;
    if cfg.problem.horizon == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let env = build_env(cfg)?;
    let params = cfg.exp4_params()?;
    let shared = if cfg.experts.redraw_per_trial {
        None
    } else {
        Some(build_expert_context(cfg, &env, &params, 0)?)
    };
    let frozen_direction = cfg.run.freeze_direction.then(|| {
        let mut rng = stream_rng(cfg.master_seed, Purpose::Direction, 0);
        unit_gaussian(&mut rng, cfg.dim())
    });
    Ok(ExperimentSetup {
        config: cfg.clone(),
        env,
        params,
        shared,
        frozen_direction,
    })
}

pub fn trial_rng(cfg: &ExperimentConfig, trial: usize) -> SimRng {
    stream_rng(cfg.master_seed, Purpose::Trial, trial as u64)
}

/// Result of one trial: its summary and its cumulative regret curve.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub summary: TrialSummary,
    pub regret: Vec<f64>,
}

fn accumulate(traj: &Trajectory, dim: usize) -> Result<GramAccumulator> {
    let mut acc = GramAccumulator::new(dim);
    for r in traj.rounds() {
        acc.accumulate(&r.feature, r.loss)?;
    }
    Ok(acc)
}

fn estimate(acc: &GramAccumulator, kind: EstimatorKind) -> Result<EstimateBundle> {
    match kind {
        EstimatorKind::Ols => ols(acc),
        EstimatorKind::Ridge(lambda) => ridge(acc, lambda),
    }
}

pub fn run_trial(setup: &ExperimentSetup, trial: usize) -> Result<TrialOutcome> {
    let cfg = &setup.config;
    let owned;
    let ctx = match &setup.shared {
        Some(c) => c,
        None => {
            owned = build_expert_context(cfg, &setup.env, &setup.params, trial as u64 + 1)?;
            &owned
        }
    };
    let mut rng = trial_rng(cfg, trial);
    let direction = match &setup.frozen_direction {
        Some(a) => a.clone(),
        None => unit_gaussian(&mut rng, cfg.dim()),
    };
    let traj = run_episode(&setup.env, &ctx.experts, &setup.params, &mut rng)?;
    let acc = accumulate(&traj, cfg.dim())?;

    let bundle = estimate(&acc, cfg.estimator_kind())?;
    let rounds = traj.rounds().iter().map(|r| (&r.feature, r.loss));
    let sigma = sigma_hat(rounds, &bundle.beta_hat, cfg.inference.sigma_normalization)?;
    let bundle = bundle.with_sigma_hat(sigma)?;
    let beta_star = setup.env.beta_star();
    let pivot = match standardized_stat(&direction, &bundle, &acc, beta_star) {
        Ok(p) => p,
        Err(Error::ZeroNoiseScale) => f64::NAN,
        Err(e) => return Err(e),
    };
    let alphas = &cfg.inference.alphas;
    let wald = wald_intervals(&direction, &bundle, &acc, alphas)?;
    let aps_params = cfg.aps_params();
    let aps_center = ridge(&acc, aps_params.lambda)?;
    let aps = aps_intervals(&direction, &aps_center, &acc, aps_params, alphas)?;

    let regret = regret_trace(&traj, &ctx.moments.gbar, &setup.env)?.cumulative;
    let summary = TrialSummary {
        trial,
        target: dot(&direction, beta_star),
        direction,
        beta_hat: bundle.beta_hat,
        sigma_hat: sigma,
        pivot,
        wald,
        aps,
        final_regret: *regret.last().ok_or(Error::EmptyTrajectory)?,
        stability_error: ctx.stability.op_error(acc.s())?,
        weight_drift: weight_drift(&traj, &ctx.w_star)?,
    };
    Ok(TrialOutcome { summary, regret })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialSummary>,
    pub coverage: Vec<CoverageRow>,
    /// Mean cumulative regret over trials, `mean_regret[t-1]` for round `t`.
    pub mean_regret: Vec<f64>,
    pub regret_bound: Vec<f64>,
    /// `None` when fewer than two finite pivots exist.
    pub normality: Option<NormalitySummary>,
    /// Moments of the shared experts, when experts are shared.
    pub moments: Option<PopulationMoments>,
    pub w_star: Option<WeightState>,
    pub beta_star: Vec<f64>,
    pub experts_text: Option<String>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))
}

fn trials_in_current_pool(setup: &ExperimentSetup) -> Result<Vec<TrialOutcome>> {
    (0..setup.config.run.n_runs)
        .into_par_iter()
        .map(|i| run_trial(setup, i))
        .collect()
}

/// Runs the trials of `setup` on a pool of `workers` threads.
pub fn run_trials(setup: &ExperimentSetup, workers: usize) -> Result<Vec<TrialOutcome>> {
    pool(workers)?.install(|| trials_in_current_pool(setup))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    pool(cfg.run.worker_count.resolve())?.install(|| {
        let setup = build_setup(cfg)?;
        let outcomes = trials_in_current_pool(&setup)?;
        aggregate(&setup, outcomes)
    })
}

fn aggregate(setup: &ExperimentSetup, outcomes: Vec<TrialOutcome>) -> Result<ExperimentResult> {
    let cfg = &setup.config;
    let horizon = cfg.problem.horizon;
    let n = outcomes.len() as f64;
    let mut mean_regret = vec![0.0; horizon];
    let mut trials = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        for (m, r) in mean_regret.iter_mut().zip(&o.regret) {
            *m += r;
        }
        trials.push(o.summary);
    }
    mean_regret.iter_mut().for_each(|m| *m /= n);
    let regret_bound = (1..=horizon)
        .map(|t| regret_bound(t, cfg.problem.num_experts))
        .collect();
    let pivots: Vec<f64> = trials.iter().map(|t| t.pivot).filter(|p| p.is_finite()).collect();
    let normality = if pivots.len() >= 2 {
        Some(normality_summary(&pivots)?)
    } else {
        None
    };
    let coverage = coverage_table(&trials, &cfg.inference.alphas)?;
    Ok(ExperimentResult {
        config: cfg.clone(),
        trials,
        coverage,
        mean_regret,
        regret_bound,
        normality,
        moments: setup.shared.as_ref().map(|c| c.moments.clone()),
        w_star: setup.shared.as_ref().map(|c| c.w_star.clone()),
        beta_star: setup.env.beta_star().to_vec(),
        experts_text: setup.shared.as_ref().map(|c| c.experts.to_text()),
    })
}
