//! Expert policies, the mixture policy, and Monte-Carlo population moments.
//!
//! # Parameter dump format
//!
//! [`ExpertSet::to_text`] writes a line-oriented text format so expert draws
//! can be replayed by other implementations:
//!
//! ```text
//! expert_set <K> <A> <d_x> <includes_uniform: 0|1>
//! uniform
//! softmax <rows> <cols>
//! <row 0: cols decimals separated by spaces>
//! ...
//! neural <num_layers>
//! layer <rows> <cols>
//! <rows lines of weights, row-major>
//! <one line of rows biases>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip decimal form, so a dump
//! followed by a load reproduces every weight bit for bit.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::environment::{expected_loss, sample_context, unit_gaussian, Context, LinearEnv};
use crate::error::{Error, Result};
use crate::linalg::{dot, min_eigenvalue};
use crate::seeds::{stream_rng, Purpose, SimRng};

/// Softmax policy over `A` actions with logits `<u_a, x>`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxExpert {
    num_actions: usize,
    context_dim: usize,
    /// Row-major `A x d_x`; row `a` is `u_a`.
    u: Vec<f64>,
}

impl SoftmaxExpert {
    pub fn new(num_actions: usize, context_dim: usize, u: Vec<f64>) -> Result<Self> {
        if u.len() != num_actions * context_dim {
            return Err(Error::DimensionMismatch {
                expected: num_actions * context_dim,
                actual: u.len(),
            });
        }
        Ok(Self {
            num_actions,
            context_dim,
            u,
        })
    }

    /// Entries of `U` i.i.d. `N(0, variance)`.
    pub fn random<R: Rng + ?Sized>(
        num_actions: usize,
        context_dim: usize,
        variance: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = gaussian(variance)?;
        let u = (0..num_actions * context_dim)
            .map(|_| normal.sample(rng))
            .collect();
        Self::new(num_actions, context_dim, u)
    }

    pub fn weights(&self) -> &[f64] {
        &self.u
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = dot(&self.u[a * self.context_dim..(a + 1) * self.context_dim], x);
        }
        softmax_in_place(out);
    }
}

/// One affine layer `h -> relu(W h + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: weights.len(),
            });
        }
        if bias.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: bias.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    fn forward_relu(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.cols).zip(&self.bias).map(|(row, b)| {
            let v = dot(row, input) + b;
            v.max(0.0)
        }));
    }
}

/// How neural expert weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuralInit {
    pub hidden_width: usize,
    pub num_layers: usize,
    /// Variance of the i.i.d. Gaussian weight entries.
    pub weight_variance: f64,
    /// Divide weights by `sqrt(fan_in)`.
    pub fan_in_scaling: bool,
}

impl Default for NeuralInit {
    fn default() -> Self {
        Self {
            hidden_width: 64,
            num_layers: 6,
            weight_variance: 1.0,
            fan_in_scaling: false,
        }
    }
}

/// Feed-forward ReLU network whose last layer outputs `A` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralExpert {
    layers: Vec<DenseLayer>,
}

impl NeuralExpert {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParameter("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].cols != pair[0].rows {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].rows,
                    actual: pair[1].cols,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Weights i.i.d. `N(0, weight_variance)` (optionally scaled by
    /// `1/sqrt(fan_in)`), biases i.i.d. standard normal.
    pub fn random<R: Rng + ?Sized>(
        num_actions: usize,
        context_dim: usize,
        init: &NeuralInit,
        rng: &mut R,
    ) -> Result<Self> {
        if init.num_layers == 0 || init.hidden_width == 0 {
            return Err(Error::InvalidParameter(
                "neural experts need a positive depth and width".into(),
            ));
        }
        let normal = gaussian(init.weight_variance)?;
        let mut layers = Vec::with_capacity(init.num_layers);
        let mut fan_in = context_dim;
        for i in 0..init.num_layers {
            let rows = if i + 1 == init.num_layers {
                num_actions
            } else {
                init.hidden_width
            };
            let scale = if init.fan_in_scaling {
                1.0 / (fan_in as f64).sqrt()
            } else {
                1.0
            };
            let weights = (0..rows * fan_in)
                .map(|_| scale * normal.sample(rng))
                .collect();
            let bias = (0..rows).map(|_| StandardNormal.sample(rng)).collect();
            layers.push(DenseLayer::new(rows, fan_in, weights, bias)?);
            fan_in = rows;
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_relu(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        out.copy_from_slice(&cur);
        softmax_in_place(out);
    }
}

/// A base policy mapping a context to a distribution over actions.
#[derive(Debug, Clone, PartialEq)]
pub enum ExpertPolicy {
    Softmax(SoftmaxExpert),
    Neural(NeuralExpert),
    Uniform { num_actions: usize },
}

impl ExpertPolicy {
    pub fn num_actions(&self) -> usize {
        match self {
            ExpertPolicy::Softmax(e) => e.num_actions,
            ExpertPolicy::Neural(e) => e.output_dim(),
            ExpertPolicy::Uniform { num_actions } => *num_actions,
        }
    }

    /// Context dimension, or `None` for the context-free uniform policy.
    pub fn context_dim(&self) -> Option<usize> {
        match self {
            ExpertPolicy::Softmax(e) => Some(e.context_dim),
            ExpertPolicy::Neural(e) => Some(e.input_dim()),
            ExpertPolicy::Uniform { .. } => None,
        }
    }

    /// Writes `pi(. | x)` into `out` (length `A`).
    pub fn probs_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ExpertPolicy::Softmax(e) => e.probs_into(x, out),
            ExpertPolicy::Neural(e) => e.probs_into(x, out),
            ExpertPolicy::Uniform { num_actions } => out.fill(1.0 / *num_actions as f64),
        }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_actions()];
        self.probs_into(x, &mut out);
        out
    }
}

pub fn softmax_probs(expert: &SoftmaxExpert, x: &Context) -> Result<Vec<f64>> {
    check_dim(expert.context_dim, x.dim())?;
    let mut out = vec![0.0; expert.num_actions];
    expert.probs_into(x.as_slice(), &mut out);
    Ok(out)
}

pub fn neural_probs(expert: &NeuralExpert, x: &Context) -> Result<Vec<f64>> {
    check_dim(expert.input_dim(), x.dim())?;
    let mut out = vec![0.0; expert.output_dim()];
    expert.probs_into(x.as_slice(), &mut out);
    Ok(out)
}

/// Max-subtracted softmax.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

/// Ordered collection of `K` experts sharing an action set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSet {
    experts: Vec<ExpertPolicy>,
    num_actions: usize,
    context_dim: usize,
    includes_uniform: bool,
}

impl ExpertSet {
    pub fn new(experts: Vec<ExpertPolicy>, context_dim: usize) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::InvalidParameter("expert set must be nonempty".into()))?;
        let num_actions = first.num_actions();
        for e in &experts {
            check_dim(num_actions, e.num_actions())?;
            if let Some(dx) = e.context_dim() {
                check_dim(context_dim, dx)?;
            }
        }
        let includes_uniform = experts
            .iter()
            .any(|e| matches!(e, ExpertPolicy::Uniform { .. }));
        Ok(Self {
            experts,
            num_actions,
            context_dim,
            includes_uniform,
        })
    }

    /// `K` softmax experts; when `include_uniform`, the last one is replaced
    /// by the uniform policy.
    pub fn softmax<R: Rng + ?Sized>(
        num_experts: usize,
        num_actions: usize,
        context_dim: usize,
        variance: f64,
        include_uniform: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n_random = random_count(num_experts, include_uniform)?;
        let mut experts = (0..n_random)
            .map(|_| {
                SoftmaxExpert::random(num_actions, context_dim, variance, rng)
                    .map(ExpertPolicy::Softmax)
            })
            .collect::<Result<Vec<_>>>()?;
        if include_uniform {
            experts.push(ExpertPolicy::Uniform { num_actions });
        }
        Self::new(experts, context_dim)
    }

    /// `K` neural experts; when `include_uniform`, the last one is replaced
    /// by the uniform policy.
    pub fn neural<R: Rng + ?Sized>(
        num_experts: usize,
        num_actions: usize,
        context_dim: usize,
        init: &NeuralInit,
        include_uniform: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let n_random = random_count(num_experts, include_uniform)?;
        let mut experts = (0..n_random)
            .map(|_| {
                NeuralExpert::random(num_actions, context_dim, init, rng).map(ExpertPolicy::Neural)
            })
            .collect::<Result<Vec<_>>>()?;
        if include_uniform {
            experts.push(ExpertPolicy::Uniform { num_actions });
        }
        Self::new(experts, context_dim)
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn includes_uniform(&self) -> bool {
        self.includes_uniform
    }

    pub fn experts(&self) -> &[ExpertPolicy] {
        &self.experts
    }

    /// Writes all expert distributions into `out`, row-major `K x A`.
    pub fn all_probs_into(&self, x: &[f64], out: &mut [f64]) {
        for (e, row) in self.experts.iter().zip(out.chunks_exact_mut(self.num_actions)) {
            e.probs_into(x, row);
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "expert_set {} {} {} {}",
            self.len(),
            self.num_actions,
            self.context_dim,
            u8::from(self.includes_uniform)
        );
        for e in &self.experts {
            match e {
                ExpertPolicy::Uniform { .. } => s.push_str("uniform\n"),
                ExpertPolicy::Softmax(sm) => {
                    let _ = writeln!(s, "softmax {} {}", sm.num_actions, sm.context_dim);
                    write_rows(&mut s, &sm.u, sm.context_dim);
                }
                ExpertPolicy::Neural(nn) => {
                    let _ = writeln!(s, "neural {}", nn.layers.len());
                    for l in &nn.layers {
                        let _ = writeln!(s, "layer {} {}", l.rows, l.cols);
                        write_rows(&mut s, &l.weights, l.cols);
                        write_rows(&mut s, &l.bias, l.rows);
                    }
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let (ln, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty expert dump".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "expert_set" {
            return Err(parse_err(ln, "expected `expert_set K A d_x uniform`"));
        }
        let k: usize = parse_num(ln, h[1])?;
        let num_actions: usize = parse_num(ln, h[2])?;
        let context_dim: usize = parse_num(ln, h[3])?;
        let mut experts = Vec::with_capacity(k);
        for _ in 0..k {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated expert dump".into()))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.first().copied() {
                Some("uniform") => experts.push(ExpertPolicy::Uniform { num_actions }),
                Some("softmax") if f.len() == 3 => {
                    let rows: usize = parse_num(ln, f[1])?;
                    let cols: usize = parse_num(ln, f[2])?;
                    let u = read_rows(&mut lines, rows, cols)?;
                    experts.push(ExpertPolicy::Softmax(SoftmaxExpert::new(rows, cols, u)?));
                }
                Some("neural") if f.len() == 2 => {
                    let n_layers: usize = parse_num(ln, f[1])?;
                    let mut layers = Vec::with_capacity(n_layers);
                    for _ in 0..n_layers {
                        let (ln, line) = lines
                            .next()
                            .ok_or_else(|| Error::Parse("truncated layer".into()))?;
                        let f: Vec<&str> = line.split_whitespace().collect();
                        if f.len() != 3 || f[0] != "layer" {
                            return Err(parse_err(ln, "expected `layer rows cols`"));
                        }
                        let rows: usize = parse_num(ln, f[1])?;
                        let cols: usize = parse_num(ln, f[2])?;
                        let w = read_rows(&mut lines, rows, cols)?;
                        let b = read_rows(&mut lines, 1, rows)?;
                        layers.push(DenseLayer::new(rows, cols, w, b)?);
                    }
                    experts.push(ExpertPolicy::Neural(NeuralExpert::new(layers)?));
                }
                _ => return Err(parse_err(ln, "unknown expert kind")),
            }
        }
        let set = Self::new(experts, context_dim)?;
        check_dim(num_actions, set.num_actions)?;
        Ok(set)
    }
}

fn random_count(num_experts: usize, include_uniform: bool) -> Result<usize> {
    if num_experts == 0 {
        return Err(Error::InvalidParameter("need at least one expert".into()));
    }
    Ok(if include_uniform {
        num_experts - 1
    } else {
        num_experts
    })
}

fn write_rows(s: &mut String, values: &[f64], cols: usize) {
    for row in values.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
}

fn read_rows<'a, I>(lines: &mut I, rows: usize, cols: usize) -> Result<Vec<f64>>
where
    I: Iterator<Item = (usize, &'a str)>,
{
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::Parse("truncated matrix".into()))?;
        let before = out.len();
        for tok in line.split_whitespace() {
            out.push(parse_num::<f64>(ln, tok)?);
        }
        if out.len() - before != cols {
            return Err(parse_err(ln, &format!("expected {cols} values")));
        }
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(line_idx: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line_idx, &format!("cannot parse `{tok}`")))
}

fn parse_err(line_idx: usize, msg: &str) -> Error {
    Error::Parse(format!("line {}: {msg}", line_idx + 1))
}

fn gaussian(variance: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, variance.sqrt())
        .map_err(|e| Error::InvalidParameter(format!("weight variance {variance}: {e}")))
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// `Q(a) = sum_k w_k pi_k(a | x)`.
pub fn mixture_probs(w: &[f64], per_expert: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_dim(w.len(), per_expert.len())?;
    let num_actions = per_expert.first().map_or(0, Vec::len);
    let mut q = vec![0.0; num_actions];
    for (wk, p) in w.iter().zip(per_expert) {
        check_dim(num_actions, p.len())?;
        for (qa, pa) in q.iter_mut().zip(p) {
            *qa += wk * pa;
        }
    }
    Ok(q)
}

/// Mixture from a flat row-major `K x A` table.
pub(crate) fn mixture_from_flat(w: &[f64], flat: &[f64], num_actions: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (wk, row) in w.iter().zip(flat.chunks_exact(num_actions)) {
        for (qa, pa) in out.iter_mut().zip(row) {
            *qa += wk * pa;
        }
    }
}

/// Monte-Carlo estimates of the per-expert second moments `Sigma_k` and the
/// context-averaged loss vector `gbar`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationMoments {
    pub sigma: Vec<DMatrix<f64>>,
    pub gbar: Vec<f64>,
    pub n_samples: usize,
    pub seed: u64,
}

impl PopulationMoments {
    pub fn num_experts(&self) -> usize {
        self.gbar.len()
    }

    pub fn dim(&self) -> usize {
        self.sigma.first().map_or(0, |s| s.nrows())
    }

    pub fn min_eigenvalues(&self) -> Vec<f64> {
        self.sigma.iter().map(min_eigenvalue).collect()
    }

    /// `min_k lambda_min(Sigma_k)`.
    pub fn lambda_floor(&self) -> f64 {
        self.min_eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// SHA-256 over the little-endian bytes of every estimate.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.sigma {
            for v in s.iter() {
                h.update(v.to_le_bytes());
            }
        }
        for v in &self.gbar {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// `(1/n) sum_i sum_a pi(a | x_i) z(x_i, a) z(x_i, a)^T` over i.i.d. contexts.
pub fn estimate_sigma_k<R: Rng + ?Sized>(
    expert: &ExpertPolicy,
    env: &LinearEnv,
    n_samples: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    check_dim(env.num_actions(), expert.num_actions())?;
    let (na, dx) = (env.num_actions(), env.context_dim());
    let mut sigma = DMatrix::zeros(na * dx, na * dx);
    let mut p = vec![0.0; na];
    for _ in 0..n_samples {
        let x = sample_context(env, rng);
        expert.probs_into(x.as_slice(), &mut p);
        for (a, &pa) in p.iter().enumerate() {
            add_block_outer(&mut sigma, a * dx, x.as_slice(), pa);
        }
    }
    sigma /= n_samples as f64;
    Ok(sigma)
}

/// `gbar_k ~ E_x[ sum_a pi_k(a|x) E[loss | x, a] ]` by Monte Carlo.
pub fn estimate_gbar<R: Rng + ?Sized>(
    experts: &ExpertSet,
    env: &LinearEnv,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    check_dim(env.num_actions(), experts.num_actions())?;
    let (k, na) = (experts.len(), env.num_actions());
    let mut flat = vec![0.0; k * na];
    let mut losses = vec![0.0; na];
    let mut gbar = vec![0.0; k];
    for _ in 0..n_samples {
        let x = sample_context(env, rng);
        experts.all_probs_into(x.as_slice(), &mut flat);
        for (a, l) in losses.iter_mut().enumerate() {
            *l = expected_loss(env, &x, a)?;
        }
        for (g, row) in gbar.iter_mut().zip(flat.chunks_exact(na)) {
            *g += dot(row, &losses);
        }
    }
    gbar.iter_mut().for_each(|g| *g /= n_samples as f64);
    Ok(gbar)
}

/// Contexts per shard in [`estimate_moments`].
pub const MOMENT_SHARD_SIZE: usize = 4096;

/// Estimates every `Sigma_k` and `gbar` from one shared context sample.
///
/// Contexts are split into fixed shards, shard `s` drawing from stream
/// `(seed, Moments, s)`. Shards may run on any number of workers; partial
/// sums are folded in shard order, so the result does not depend on the
/// thread count.
pub fn estimate_moments(
    experts: &ExpertSet,
    env: &LinearEnv,
    n_samples: usize,
    seed: u64,
) -> Result<PopulationMoments> {
    estimate_moments_from(experts, env, n_samples, seed, 0)
}

/// As [`estimate_moments`], with shard `s` drawing from stream index
/// `first_stream + s`. Used when several expert sets share one seed.
pub fn estimate_moments_from(
    experts: &ExpertSet,
    env: &LinearEnv,
    n_samples: usize,
    seed: u64,
    first_stream: u64,
) -> Result<PopulationMoments> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive".into()));
    }
    check_dim(env.num_actions(), experts.num_actions())?;
    check_dim(env.context_dim(), experts.context_dim())?;
    let n_shards = n_samples.div_ceil(MOMENT_SHARD_SIZE);
    let partials: Vec<(Vec<DMatrix<f64>>, Vec<f64>)> = (0..n_shards)
        .into_par_iter()
        .map(|s| {
            let count = MOMENT_SHARD_SIZE.min(n_samples - s * MOMENT_SHARD_SIZE);
            let mut rng = stream_rng(seed, Purpose::Moments, first_stream + s as u64);
            moment_shard(experts, env, count, &mut rng)
        })
        .collect();

    let (k, dim) = (experts.len(), env.dim());
    let mut sigma = vec![DMatrix::zeros(dim, dim); k];
    let mut gbar = vec![0.0; k];
    for (ps, pg) in partials {
        for (acc, p) in sigma.iter_mut().zip(ps) {
            *acc += p;
        }
        for (acc, p) in gbar.iter_mut().zip(pg) {
            *acc += p;
        }
    }
    let n = n_samples as f64;
    for s in &mut sigma {
        *s /= n;
        // Exact symmetry.
        let t = s.transpose();
        *s = (&*s + t) * 0.5;
    }
    gbar.iter_mut().for_each(|g| *g /= n);
    Ok(PopulationMoments {
        sigma,
        gbar,
        n_samples,
        seed,
    })
}

fn moment_shard(
    experts: &ExpertSet,
    env: &LinearEnv,
    count: usize,
    rng: &mut SimRng,
) -> (Vec<DMatrix<f64>>, Vec<f64>) {
    let (k, na, dx) = (experts.len(), env.num_actions(), env.context_dim());
    let mut xs = DMatrix::zeros(count, dx);
    let mut probs = vec![0.0; count * k * na];
    let mut gbar = vec![0.0; k];
    let mut losses = vec![0.0; na];
    for i in 0..count {
        let x = unit_gaussian(rng, dx);
        for (j, v) in x.iter().enumerate() {
            xs[(i, j)] = *v;
        }
        let row = &mut probs[i * k * na..(i + 1) * k * na];
        experts.all_probs_into(&x, row);
        for (a, l) in losses.iter_mut().enumerate() {
            *l = dot(env.theta(a), &x);
        }
        for (g, p) in gbar.iter_mut().zip(row.chunks_exact(na)) {
            *g += dot(p, &losses);
        }
    }
    let mut sigma = Vec::with_capacity(k);
    for e in 0..k {
        let mut m = DMatrix::zeros(na * dx, na * dx);
        for a in 0..na {
            // Block a: X^T diag(p_a) X, computed as Y^T Y with Y = diag(sqrt p_a) X.
            let mut y = xs.clone();
            for i in 0..count {
                let p = probs[i * k * na + e * na + a];
                y.row_mut(i).scale_mut(p.sqrt());
            }
            let block = y.tr_mul(&y);
            m.view_mut((a * dx, a * dx), (dx, dx)).copy_from(&block);
        }
        sigma.push(m);
    }
    (sigma, gbar)
}

fn add_block_outer(m: &mut DMatrix<f64>, offset: usize, x: &[f64], weight: f64) {
    for (i, xi) in x.iter().enumerate() {
        let wi = weight * xi;
        for (j, xj) in x.iter().enumerate() {
            m[(offset + i, offset + j)] += wi * xj;
        }
    }
}
