//! Stochastic linear-loss environment with a block-sparse feature map.
//!
//! Each action `a` owns a block `theta_a` of the global parameter, and the
//! feature of `(x, a)` places the context in block `a`. Losses are
//! `<beta*, c(x, a)> + noise` with bounded, mean-zero noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};

/// Unit-norm context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Context(Vec<f64>);

impl Context {
    /// Wraps `x`; fails unless `||x||_2 = 1` within 1e-12.
    pub fn new(x: Vec<f64>) -> Result<Self> {
        let n = norm2(&x);
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "context must have unit norm, got {n}"
            )));
        }
        Ok(Self(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Feature `c(x, a)`: the context placed in block `a` of an `A * d_x` vector.
///
/// Stored sparsely as the block index and the block contents.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    block: usize,
    num_blocks: usize,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(block: usize, num_blocks: usize, values: Vec<f64>) -> Result<Self> {
        if block >= num_blocks {
            return Err(Error::ActionOutOfRange {
                action: block,
                num_actions: num_blocks,
            });
        }
        Ok(Self {
            block,
            num_blocks,
            values,
        })
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn block_len(&self) -> usize {
        self.values.len()
    }

    pub fn block_values(&self) -> &[f64] {
        &self.values
    }

    /// Length of the dense vector, `A * d_x`.
    pub fn len(&self) -> usize {
        self.num_blocks * self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn offset(&self) -> usize {
        self.block * self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }

    /// Inner product with a dense vector of length [`Self::len`].
    pub fn dot(&self, dense: &[f64]) -> f64 {
        let off = self.offset();
        dot(&self.values, &dense[off..off + self.values.len()])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut z = vec![0.0; self.len()];
        let off = self.offset();
        z[off..off + self.values.len()].copy_from_slice(&self.values);
        z
    }
}

/// Law of the additive loss noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    /// `+scale` or `-scale` with equal probability.
    Rademacher { scale: f64 },
}

impl NoiseLaw {
    pub fn bound(&self) -> f64 {
        match *self {
            NoiseLaw::Uniform { half_width } => half_width,
            NoiseLaw::Rademacher { scale } => scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            NoiseLaw::Uniform { half_width } => half_width * half_width / 3.0,
            NoiseLaw::Rademacher { scale } => scale * scale,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseLaw::Uniform { half_width } => {
                if half_width == 0.0 {
                    0.0
                } else {
                    rng.random_range(-half_width..=half_width)
                }
            }
            NoiseLaw::Rademacher { scale } => {
                if rng.random::<bool>() {
                    scale
                } else {
                    -scale
                }
            }
        }
    }
}

/// Linear-loss environment. Immutable after construction; all randomness is
/// drawn from generators supplied by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEnv {
    num_actions: usize,
    context_dim: usize,
    beta_star: Vec<f64>,
    noise: NoiseLaw,
    rng_seed: u64,
}

impl LinearEnv {
    pub fn new(
        num_actions: usize,
        context_dim: usize,
        beta_star: Vec<f64>,
        noise: NoiseLaw,
        rng_seed: u64,
    ) -> Result<Self> {
        if num_actions == 0 || context_dim == 0 {
            return Err(Error::InvalidParameter(
                "num_actions and context_dim must be positive".into(),
            ));
        }
        if beta_star.len() != num_actions * context_dim {
            return Err(Error::DimensionMismatch {
                expected: num_actions * context_dim,
                actual: beta_star.len(),
            });
        }
        if norm2(&beta_star) > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "||beta*|| = {} exceeds 1",
                norm2(&beta_star)
            )));
        }
        if !(noise.bound() >= 0.0) {
            return Err(Error::InvalidParameter(
                "noise bound must be nonnegative".into(),
            ));
        }
        Ok(Self {
            num_actions,
            context_dim,
            beta_star,
            noise,
            rng_seed,
        })
    }

    /// Environment with a freshly drawn unit-norm `beta*`.
    pub fn random<R: Rng + ?Sized>(
        num_actions: usize,
        context_dim: usize,
        noise: NoiseLaw,
        rng_seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        let beta = make_beta_star(rng, num_actions, context_dim)?;
        Self::new(num_actions, context_dim, beta, noise, rng_seed)
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    /// Dimension of the global parameter, `A * d_x`.
    pub fn dim(&self) -> usize {
        self.num_actions * self.context_dim
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    /// Block `theta_a` of `beta*`.
    pub fn theta(&self, action: usize) -> &[f64] {
        &self.beta_star[action * self.context_dim..(action + 1) * self.context_dim]
    }

    pub fn noise(&self) -> NoiseLaw {
        self.noise
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.num_actions {
            return Err(Error::ActionOutOfRange {
                action,
                num_actions: self.num_actions,
            });
        }
        Ok(())
    }
}

/// Draws `beta*` with i.i.d. standard normal entries rescaled to unit norm.
pub fn make_beta_star<R: Rng + ?Sized>(
    rng: &mut R,
    num_actions: usize,
    context_dim: usize,
) -> Result<Vec<f64>> {
    if num_actions == 0 || context_dim == 0 {
        return Err(Error::InvalidParameter(
            "num_actions and context_dim must be positive".into(),
        ));
    }
    Ok(unit_gaussian(rng, num_actions * context_dim))
}

/// Uniform draw on the unit sphere in `dim` dimensions.
pub fn unit_gaussian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm2(&g);
        if n > 0.0 {
            g.iter_mut().for_each(|v| *v /= n);
            return g;
        }
    }
}

/// Normalized Gaussian context.
pub fn sample_context<R: Rng + ?Sized>(env: &LinearEnv, rng: &mut R) -> Context {
    Context(unit_gaussian(rng, env.context_dim))
}

pub fn feature(env: &LinearEnv, x: &Context, action: usize) -> Result<FeatureVector> {
    env.check_action(action)?;
    if x.dim() != env.context_dim {
        return Err(Error::DimensionMismatch {
            expected: env.context_dim,
            actual: x.dim(),
        });
    }
    Ok(FeatureVector {
        block: action,
        num_blocks: env.num_actions,
        values: x.0.clone(),
    })
}

/// `E[loss | x, a] = <theta_a, x>`.
pub fn expected_loss(env: &LinearEnv, x: &Context, action: usize) -> Result<f64> {
    env.check_action(action)?;
    Ok(dot(env.theta(action), x.as_slice()))
}

pub fn realize_loss<R: Rng + ?Sized>(
    env: &LinearEnv,
    x: &Context,
    action: usize,
    rng: &mut R,
) -> Result<f64> {
    Ok(expected_loss(env, x, action)? + env.noise.sample(rng))
}
