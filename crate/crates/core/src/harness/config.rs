//! Experiment configuration.
//!
//! The native format is TOML. Every key is optional; missing keys take the
//! defaults of the chosen `setting`. JSON with the same structure is also
//! accepted. Unknown keys and out-of-range values are rejected with the line
//! of the offending entry.
//!
//! ```toml
//! setting = "softmax"        # softmax | neural | custom
//! master_seed = 1
//! output_dir = "results"
//!
//! [problem]
//! horizon = 3000
//! num_experts = 5
//! num_actions = 5
//! context_dim = 10
//! noise = "uniform"          # uniform | rademacher
//! noise_half_width = 0.1
//!
//! [experts]
//! family = "softmax"         # softmax | neural
//! include_uniform = true
//! softmax_variance = 12.0
//! neural_weight_variance = 1.0
//! neural_hidden_width = 64
//! neural_layers = 6
//! fan_in_scaling = false
//! redraw_per_trial = false
//!
//! [learner]
//! update_rule = "analysis"   # analysis | algorithm1
//! eta_denominator = "A"      # A | K
//!
//! [inference]
//! estimator = "ols"          # ols | ridge
//! lambda_rid = 0.000333      # default 1/T
//! alphas = [0.2, 0.15, 0.1, 0.05, 0.01]
//! sigma_normalization = "n"  # n | n_minus_d
//! aps_lambda = 1.0
//! aps_feature_bound = 1.0
//! aps_param_bound = 1.0
//!
//! [run]
//! n_runs = 1200
//! n_moment_samples = 100000
//! worker_count = "auto"      # or a positive integer
//! freeze_direction = false
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};

use crate::environment::NoiseLaw;
use crate::error::{Error, Result};
use crate::exp4::{EtaDenominator, Exp4Params, UpdateRule};
use crate::experts::NeuralInit;
use crate::inference::{ApsParams, EstimatorKind, SigmaNormalization};

pub const ENV_WORKERS: &str = "EXP4STAB_WORKERS";
pub const DEFAULT_ALPHAS: [f64; 5] = [0.20, 0.15, 0.10, 0.05, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[default]
    Softmax,
    Neural,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertFamily {
    Softmax,
    Neural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ols,
    Ridge,
}

/// Number of worker threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Workers {
    #[default]
    Auto,
    Count(usize),
}

impl Workers {
    pub fn resolve(self) -> usize {
        match self {
            Workers::Auto => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Workers::Count(n) => n,
        }
    }
}

impl fmt::Display for Workers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Workers::Auto => f.write_str("auto"),
            Workers::Count(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for Workers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Workers::Auto);
        }
        match s.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Workers::Count(n)),
            _ => Err(Error::InvalidParameter(format!(
                "worker count must be \"auto\" or a positive integer, got {s:?}"
            ))),
        }
    }
}

impl Serialize for Workers {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Workers::Auto => s.serialize_str("auto"),
            Workers::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Workers {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) if n >= 1 => Ok(Workers::Count(n as usize)),
            Raw::Int(n) => Err(de::Error::custom(format!(
                "worker_count must be at least 1, got {n}"
            ))),
            Raw::Str(s) => s.parse().map_err(de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: usize,
    pub num_experts: usize,
    pub num_actions: usize,
    pub context_dim: usize,
    pub noise: NoiseKind,
    pub noise_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertsConfig {
    pub family: ExpertFamily,
    pub include_uniform: bool,
    pub softmax_variance: f64,
    pub neural_weight_variance: f64,
    pub neural_hidden_width: usize,
    pub neural_layers: usize,
    pub fan_in_scaling: bool,
    pub redraw_per_trial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    pub update_rule: UpdateRule,
    pub eta_denominator: EtaDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub estimator: Estimator,
    pub lambda_rid: f64,
    pub alphas: Vec<f64>,
    pub sigma_normalization: SigmaNormalization,
    pub aps_lambda: f64,
    pub aps_feature_bound: f64,
    pub aps_param_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n_runs: usize,
    pub n_moment_samples: usize,
    pub worker_count: Workers,
    pub freeze_direction: bool,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub problem: ProblemConfig,
    pub experts: ExpertsConfig,
    pub learner: LearnerConfig,
    pub inference: InferenceConfig,
    pub run: RunConfig,
}

// Input side: every key optional, validated while deserializing so the
// format's own error carries the position of the bad value.

fn positive<'de, D, T>(d: D) -> std::result::Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de> + PartialOrd + Default + fmt::Display,
{
    let v = T::deserialize(d)?;
    if v > T::default() {
        Ok(Some(v))
    } else {
        Err(de::Error::custom(format!("must be positive, got {v}")))
    }
}

fn nonnegative_f64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    let v = f64::deserialize(d)?;
    if v >= 0.0 && v.is_finite() {
        Ok(Some(v))
    } else {
        Err(de::Error::custom(format!("must be a finite nonnegative number, got {v}")))
    }
}

fn positive_f64<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
    let v = f64::deserialize(d)?;
    if v > 0.0 && v.is_finite() {
        Ok(Some(v))
    } else {
        Err(de::Error::custom(format!("must be a finite positive number, got {v}")))
    }
}

fn alpha_list<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Vec<f64>>, D::Error> {
    let v = Vec::<f64>::deserialize(d)?;
    if v.is_empty() {
        return Err(de::Error::custom("alphas must not be empty"));
    }
    if let Some(a) = v.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(de::Error::custom(format!("every alpha must lie in (0, 1), got {a}")));
    }
    Ok(Some(v))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    horizon: Option<usize>,
    #[serde(default, deserialize_with = "positive")]
    num_experts: Option<usize>,
    #[serde(default, deserialize_with = "positive")]
    num_actions: Option<usize>,
    #[serde(default, deserialize_with = "positive")]
    context_dim: Option<usize>,
    noise: Option<NoiseKind>,
    #[serde(default, deserialize_with = "nonnegative_f64")]
    noise_half_width: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperts {
    family: Option<ExpertFamily>,
    include_uniform: Option<bool>,
    #[serde(default, deserialize_with = "nonnegative_f64")]
    softmax_variance: Option<f64>,
    #[serde(default, deserialize_with = "nonnegative_f64")]
    neural_weight_variance: Option<f64>,
    #[serde(default, deserialize_with = "positive")]
    neural_hidden_width: Option<usize>,
    #[serde(default, deserialize_with = "positive")]
    neural_layers: Option<usize>,
    fan_in_scaling: Option<bool>,
    redraw_per_trial: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLearner {
    update_rule: Option<UpdateRule>,
    eta_denominator: Option<EtaDenominator>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInference {
    estimator: Option<Estimator>,
    #[serde(default, deserialize_with = "positive_f64")]
    lambda_rid: Option<f64>,
    #[serde(default, deserialize_with = "alpha_list")]
    alphas: Option<Vec<f64>>,
    sigma_normalization: Option<SigmaNormalization>,
    #[serde(default, deserialize_with = "positive_f64")]
    aps_lambda: Option<f64>,
    #[serde(default, deserialize_with = "positive_f64")]
    aps_feature_bound: Option<f64>,
    #[serde(default, deserialize_with = "nonnegative_f64")]
    aps_param_bound: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    #[serde(default, deserialize_with = "positive")]
    n_runs: Option<usize>,
    #[serde(default, deserialize_with = "positive")]
    n_moment_samples: Option<usize>,
    worker_count: Option<Workers>,
    freeze_direction: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    setting: Option<Setting>,
    master_seed: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    problem: RawProblem,
    #[serde(default)]
    experts: RawExperts,
    #[serde(default)]
    learner: RawLearner,
    #[serde(default)]
    inference: RawInference,
    #[serde(default)]
    run: RawRun,
}

impl RawConfig {
    fn resolve(self) -> Result<ExperimentConfig> {
        let setting = self.setting.unwrap_or_default();
        let (family, a, k, dx) = match setting {
            Setting::Softmax | Setting::Custom => (ExpertFamily::Softmax, 5, 5, 10),
            Setting::Neural => (ExpertFamily::Neural, 3, 5, 50),
        };
        let p = self.problem;
        let horizon = p.horizon.unwrap_or(3000);
        let e = self.experts;
        let init = NeuralInit::default();
        let i = self.inference;
        let r = self.run;
        let cfg = ExperimentConfig {
            setting,
            master_seed: self.master_seed.unwrap_or(1),
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("results")),
            problem: ProblemConfig {
                horizon,
                num_experts: p.num_experts.unwrap_or(k),
                num_actions: p.num_actions.unwrap_or(a),
                context_dim: p.context_dim.unwrap_or(dx),
                noise: p.noise.unwrap_or(NoiseKind::Uniform),
                noise_half_width: p.noise_half_width.unwrap_or(0.1),
            },
            experts: ExpertsConfig {
                family: e.family.unwrap_or(family),
                include_uniform: e.include_uniform.unwrap_or(true),
                softmax_variance: e.softmax_variance.unwrap_or(12.0),
                neural_weight_variance: e.neural_weight_variance.unwrap_or(init.weight_variance),
                neural_hidden_width: e.neural_hidden_width.unwrap_or(init.hidden_width),
                neural_layers: e.neural_layers.unwrap_or(init.num_layers),
                fan_in_scaling: e.fan_in_scaling.unwrap_or(init.fan_in_scaling),
                redraw_per_trial: e.redraw_per_trial.unwrap_or(false),
            },
            learner: LearnerConfig {
                update_rule: self.learner.update_rule.unwrap_or_default(),
                eta_denominator: self.learner.eta_denominator.unwrap_or_default(),
            },
            inference: InferenceConfig {
                estimator: i.estimator.unwrap_or(Estimator::Ols),
                lambda_rid: i.lambda_rid.unwrap_or(1.0 / horizon.max(1) as f64),
                alphas: i.alphas.unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
                sigma_normalization: i.sigma_normalization.unwrap_or_default(),
                aps_lambda: i.aps_lambda.unwrap_or(1.0),
                aps_feature_bound: i.aps_feature_bound.unwrap_or(1.0),
                aps_param_bound: i.aps_param_bound.unwrap_or(1.0),
            },
            run: RunConfig {
                n_runs: r.n_runs.unwrap_or(1200),
                n_moment_samples: r.n_moment_samples.unwrap_or(100_000),
                worker_count: r.worker_count.unwrap_or_default(),
                freeze_direction: r.freeze_direction.unwrap_or(false),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_setting(Setting::Softmax)
    }
}

impl ExperimentConfig {
    pub fn for_setting(setting: Setting) -> Self {
        RawConfig {
            setting: Some(setting),
            ..RawConfig::default()
        }
        .resolve()
        .expect("built-in defaults are valid")
    }

    /// Parses TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        raw.resolve()
    }

    /// Parses JSON text with the same structure.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            line: e.line(),
            message: e.to_string(),
        })?;
        raw.resolve()
    }

    /// Reads a config file; `.json` files are parsed as JSON, anything else
    /// as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Cross-field checks that cannot be attributed to one line.
    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.num_experts == 0 || p.num_actions == 0 || p.context_dim == 0 {
            return Err(Error::InvalidParameter(
                "num_experts, num_actions and context_dim must be positive".into(),
            ));
        }
        if self.inference.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) || self.inference.alphas.is_empty() {
            return Err(Error::InvalidParameter("alphas must be nonempty and lie in (0, 1)".into()));
        }
        if self.run.n_runs == 0 || self.run.n_moment_samples == 0 {
            return Err(Error::InvalidParameter("n_runs and n_moment_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.problem.num_actions * self.problem.context_dim
    }

    pub fn noise_law(&self) -> NoiseLaw {
        let s = self.problem.noise_half_width;
        match self.problem.noise {
            NoiseKind::Uniform => NoiseLaw::Uniform { half_width: s },
            NoiseKind::Rademacher => NoiseLaw::Rademacher { scale: s },
        }
    }

    pub fn neural_init(&self) -> NeuralInit {
        NeuralInit {
            hidden_width: self.experts.neural_hidden_width,
            num_layers: self.experts.neural_layers,
            weight_variance: self.experts.neural_weight_variance,
            fan_in_scaling: self.experts.fan_in_scaling,
        }
    }

    pub fn exp4_params(&self) -> Result<Exp4Params> {
        let mut p = Exp4Params::defaults(
            self.problem.num_experts,
            self.problem.num_actions,
            self.problem.horizon,
            self.learner.eta_denominator,
        )?;
        p.update_rule = self.learner.update_rule;
        Ok(p)
    }

    pub fn estimator_kind(&self) -> EstimatorKind {
        match self.inference.estimator {
            Estimator::Ols => EstimatorKind::Ols,
            Estimator::Ridge => EstimatorKind::Ridge(self.inference.lambda_rid),
        }
    }

    pub fn aps_params(&self) -> ApsParams {
        ApsParams {
            lambda: self.inference.aps_lambda,
            feature_bound: self.inference.aps_feature_bound,
            param_bound: self.inference.aps_param_bound,
        }
    }

    /// Applies `EXP4STAB_WORKERS` if set.
    pub fn apply_env_overrides(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(ENV_WORKERS) {
            self.run.worker_count = v.parse()?;
        }
        Ok(())
    }
}
