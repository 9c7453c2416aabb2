//! Least-squares inference on adaptively collected data.
//!
//! A [`GramAccumulator`] keeps `S = sum z z^T` and `b = sum z l`. From it we
//! get OLS and ridge estimates, the Wald interval
//! `a.beta_hat +- z_{1-alpha/2} sigma_hat sqrt(a^T S^{-1} a)` and the
//! self-normalized interval `a.beta_ridge +- R_T sqrt(a^T V^{-1} a)` with
//! `V = lambda I + S`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::environment::FeatureVector;
use crate::error::{Error, Result};
use crate::linalg::{dot, inverse_quadratic_form, min_eigenvalue, spd_solve};
use crate::normal::two_sided_critical;

/// Relative eigenvalue tolerance below which `S` counts as singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GramAccumulator {
    s: DMatrix<f64>,
    b: DVector<f64>,
    n: usize,
}

impl GramAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            s: DMatrix::zeros(dim, dim),
            b: DVector::zeros(dim),
            n: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Adds one block-sparse observation. Only the `d_x x d_x` diagonal block
    /// of `S` belonging to the chosen action is touched.
    pub fn accumulate(&mut self, z: &FeatureVector, loss: f64) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        let off = z.offset();
        let x = z.block_values();
        for (i, xi) in x.iter().enumerate() {
            self.b[off + i] += xi * loss;
            for (j, xj) in x.iter().enumerate() {
                self.s[(off + i, off + j)] += xi * xj;
            }
        }
        self.n += 1;
        Ok(())
    }

    pub fn accumulate_dense(&mut self, z: &[f64], loss: f64) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: z.len(),
            });
        }
        let zv = DVector::from_column_slice(z);
        self.s.ger(1.0, &zv, &zv, 1.0);
        self.b.axpy(loss, &zv, 1.0);
        self.n += 1;
        Ok(())
    }

    /// `S + lambda I`.
    pub fn regularized(&self, lambda: f64) -> DMatrix<f64> {
        let mut m = self.s.clone();
        for i in 0..self.dim() {
            m[(i, i)] += lambda;
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lambda")]
pub enum EstimatorKind {
    Ols,
    Ridge(f64),
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::Ridge(_) => "ridge",
        }
    }

    /// The matrix whose inverse scales the Wald interval: `S` or `S + lambda I`.
    pub fn design_matrix(self, acc: &GramAccumulator) -> DMatrix<f64> {
        match self {
            EstimatorKind::Ols => acc.s.clone(),
            EstimatorKind::Ridge(lambda) => acc.regularized(lambda),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateBundle {
    pub beta_hat: Vec<f64>,
    /// Filled in by [`EstimateBundle::with_sigma_hat`] once residuals are known.
    pub sigma_hat: Option<f64>,
    pub kind: EstimatorKind,
}

impl EstimateBundle {
    pub fn with_sigma_hat(mut self, sigma_hat: f64) -> Result<Self> {
        if !(sigma_hat >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_hat must be nonnegative, got {sigma_hat}"
            )));
        }
        self.sigma_hat = Some(sigma_hat);
        Ok(self)
    }

    fn sigma(&self) -> Result<f64> {
        self.sigma_hat.ok_or(Error::MissingNoiseScale)
    }
}

/// OLS estimate. Fails with [`Error::SingularDesign`] when
/// `lambda_min(S) <= 1e-10 * trace(S) / d`.
pub fn ols(acc: &GramAccumulator) -> Result<EstimateBundle> {
    let d = acc.dim();
    let tolerance = SINGULAR_TOLERANCE * acc.s.trace() / d as f64;
    let lmin = min_eigenvalue(&acc.s);
    if acc.n < d || !(lmin > tolerance) {
        return Err(Error::SingularDesign {
            min_eigenvalue: lmin,
            tolerance,
        });
    }
    let beta = spd_solve(&acc.s, &acc.b)?;
    Ok(EstimateBundle {
        beta_hat: beta.as_slice().to_vec(),
        sigma_hat: None,
        kind: EstimatorKind::Ols,
    })
}

/// Ridge estimate solving `(S + lambda I) beta = b`.
pub fn ridge(acc: &GramAccumulator, lambda: f64) -> Result<EstimateBundle> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "ridge lambda must be positive, got {lambda}"
        )));
    }
    let beta = spd_solve(&acc.regularized(lambda), &acc.b)?;
    Ok(EstimateBundle {
        beta_hat: beta.as_slice().to_vec(),
        sigma_hat: None,
        kind: EstimatorKind::Ridge(lambda),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaNormalization {
    /// Divide the residual sum of squares by `n`.
    #[default]
    N,
    /// Divide by `n - d`.
    NMinusD,
}

/// Root-mean-square residual of `l_t - <z_t, beta>`.
pub fn sigma_hat<'a, I>(rounds: I, beta: &[f64], normalization: SigmaNormalization) -> Result<f64>
where
    I: IntoIterator<Item = (&'a FeatureVector, f64)>,
{
    let mut rss = 0.0;
    let mut n = 0usize;
    for (z, loss) in rounds {
        if z.len() != beta.len() {
            return Err(Error::DimensionMismatch {
                expected: beta.len(),
                actual: z.len(),
            });
        }
        let r = loss - z.dot(beta);
        rss += r * r;
        n += 1;
    }
    let denom = match normalization {
        SigmaNormalization::N => n as f64,
        SigmaNormalization::NMinusD => n as f64 - beta.len() as f64,
    };
    if n == 0 || denom <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma_hat needs more rounds than the normalization allows (n = {n})"
        )));
    }
    Ok((rss / denom).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub center: f64,
    pub half_width: f64,
    pub alpha: f64,
}

impl Interval {
    pub fn lower(&self) -> f64 {
        self.center - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.center + self.half_width
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width
    }

    /// Closed-interval membership against the stored endpoints.
    pub fn contains(&self, value: f64) -> bool {
        self.lower() <= value && value <= self.upper()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )))
    }
}

/// Wald interval for `a^T beta`. Ridge bundles use `S + lambda_rid I`.
pub fn wald_interval(
    a: &[f64],
    bundle: &EstimateBundle,
    acc: &GramAccumulator,
    alpha: f64,
) -> Result<Interval> {
    Ok(wald_intervals(a, bundle, acc, &[alpha])?.remove(0))
}

/// Wald intervals at several levels sharing one quadratic-form solve.
pub fn wald_intervals(
    a: &[f64],
    bundle: &EstimateBundle,
    acc: &GramAccumulator,
    alphas: &[f64],
) -> Result<Vec<Interval>> {
    alphas.iter().try_for_each(|&al| check_alpha(al))?;
    let sigma = bundle.sigma()?;
    let q = inverse_quadratic_form(&bundle.kind.design_matrix(acc), a)?;
    let center = dot(a, &bundle.beta_hat);
    Ok(alphas
        .iter()
        .map(|&alpha| Interval {
            center,
            half_width: two_sided_critical(alpha) * sigma * q.sqrt(),
            alpha,
        })
        .collect())
}

/// `sqrt(d log(T L / lambda) + log(1 / alpha)) + sqrt(lambda) S`.
pub fn rt_factor(
    horizon: f64,
    feature_bound: f64,
    lambda_reg: f64,
    alpha: f64,
    dim: usize,
    param_bound: f64,
) -> Result<f64> {
    if !(horizon > 0.0 && feature_bound > 0.0 && lambda_reg > 0.0) {
        return Err(Error::InvalidParameter(
            "T, L and lambda must be positive".into(),
        ));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let inner = dim as f64 * (horizon * feature_bound / lambda_reg).ln() + (1.0 / alpha).ln();
    Ok(inner.max(0.0).sqrt() + lambda_reg.sqrt() * param_bound)
}

/// Parameters of the self-normalized interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApsParams {
    pub lambda: f64,
    /// Bound on feature norms.
    pub feature_bound: f64,
    /// Bound on `||beta*||`.
    pub param_bound: f64,
}

impl Default for ApsParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            feature_bound: 1.0,
            param_bound: 1.0,
        }
    }
}

/// Self-normalized interval centred at the ridge estimate in `ridge_bundle`.
/// The horizon `T` is taken from the accumulator's round count.
pub fn aps_interval(
    a: &[f64],
    ridge_bundle: &EstimateBundle,
    acc: &GramAccumulator,
    aps: ApsParams,
    alpha: f64,
) -> Result<Interval> {
    Ok(aps_intervals(a, ridge_bundle, acc, aps, &[alpha])?.remove(0))
}

/// Self-normalized intervals at several levels sharing one solve.
pub fn aps_intervals(
    a: &[f64],
    ridge_bundle: &EstimateBundle,
    acc: &GramAccumulator,
    aps: ApsParams,
    alphas: &[f64],
) -> Result<Vec<Interval>> {
    alphas.iter().try_for_each(|&al| check_alpha(al))?;
    let q = inverse_quadratic_form(&acc.regularized(aps.lambda), a)?;
    let center = dot(a, &ridge_bundle.beta_hat);
    alphas
        .iter()
        .map(|&alpha| {
            let rt = rt_factor(
                acc.n.max(1) as f64,
                aps.feature_bound,
                aps.lambda,
                alpha,
                acc.dim(),
                aps.param_bound,
            )?;
            Ok(Interval {
                center,
                half_width: rt * q.sqrt(),
                alpha,
            })
        })
        .collect()
}

/// `a^T (beta_hat - beta*) / (sigma_hat sqrt(a^T M^{-1} a))` with `M` the
/// bundle's design matrix.
pub fn standardized_stat(
    a: &[f64],
    bundle: &EstimateBundle,
    acc: &GramAccumulator,
    beta_star: &[f64],
) -> Result<f64> {
    let sigma = bundle.sigma()?;
    if sigma == 0.0 {
        return Err(Error::ZeroNoiseScale);
    }
    let q = inverse_quadratic_form(&bundle.kind.design_matrix(acc), a)?;
    let err: f64 = a
        .iter()
        .zip(bundle.beta_hat.iter().zip(beta_star))
        .map(|(ai, (b, s))| ai * (b - s))
        .sum();
    Ok(err / (sigma * q.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{feature, sample_context, LinearEnv, NoiseLaw};
    use crate::seeds::SimRng;
    use rand::{Rng, SeedableRng};

    fn identity_acc(d: usize, b: &[f64]) -> GramAccumulator {
        let mut acc = GramAccumulator::new(d);
        for i in 0..d {
            let mut z = vec![0.0; d];
            z[i] = 1.0;
            acc.accumulate_dense(&z, b[i]).unwrap();
        }
        acc
    }

    #[test]
    fn accumulate_basic() {
        let acc = identity_acc(3, &[1.0, 0.0, 0.0]);
        assert_eq!(acc.n(), 3);
        assert_eq!(acc.s(), &DMatrix::identity(3, 3));
        assert_eq!(acc.b().as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn sparse_and_dense_paths_agree() {
        let mut rng = SimRng::seed_from_u64(1);
        let env = LinearEnv::random(3, 4, NoiseLaw::Uniform { half_width: 0.1 }, 1, &mut rng).unwrap();
        let mut sparse = GramAccumulator::new(12);
        let mut dense = GramAccumulator::new(12);
        for _ in 0..50 {
            let x = sample_context(&env, &mut rng);
            let z = feature(&env, &x, rng.random_range(0..3)).unwrap();
            let l: f64 = rng.random_range(-1.0..1.0);
            sparse.accumulate(&z, l).unwrap();
            dense.accumulate_dense(&z.to_dense(), l).unwrap();
        }
        assert!((sparse.s() - dense.s()).norm() < 1e-13);
        assert!((sparse.b() - dense.b()).norm() < 1e-13);
        assert!(sparse.s().trace() <= 50.0 + 1e-9);
    }

    #[test]
    fn ols_examples() {
        let acc = identity_acc(3, &[0.5, -1.0, 2.0]);
        let est = ols(&acc).unwrap();
        assert_eq!(est.beta_hat, vec![0.5, -1.0, 2.0]);
        let mut short = GramAccumulator::new(3);
        short.accumulate_dense(&[1.0, 0.0, 0.0], 1.0).unwrap();
        assert!(matches!(ols(&short), Err(Error::SingularDesign { .. })));
    }

    #[test]
    fn ridge_examples() {
        let acc = identity_acc(2, &[2.0, 0.0]);
        let est = ridge(&acc, 1.0).unwrap();
        assert!((est.beta_hat[0] - 1.0).abs() < 1e-15 && est.beta_hat[1] == 0.0);
        let big = ridge(&acc, 1e12).unwrap();
        assert!(big.beta_hat[0].abs() < 1e-11);
        let o = ols(&acc).unwrap();
        let small = ridge(&acc, 1e-9).unwrap();
        for (a, b) in o.beta_hat.iter().zip(&small.beta_hat) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(ridge(&acc, 0.0).is_err());
    }

    #[test]
    fn sigma_hat_examples() {
        let z = FeatureVector::new(0, 1, vec![1.0]).unwrap();
        let rounds = [(&z, 1.0), (&z, -1.0)];
        assert_eq!(sigma_hat(rounds, &[0.0], SigmaNormalization::N).unwrap(), 1.0);
        let rounds = [(&z, 0.3), (&z, 0.3)];
        assert_eq!(sigma_hat(rounds, &[0.3], SigmaNormalization::N).unwrap(), 0.0);
    }

    #[test]
    fn wald_examples() {
        let acc = identity_acc(2, &[0.0, 0.0]);
        let est = ols(&acc).unwrap().with_sigma_hat(1.0).unwrap();
        let a = [0.6, 0.8];
        let iv = wald_interval(&a, &est, &acc, 0.05).unwrap();
        assert!((iv.half_width - 1.959_963_984_540_054).abs() < 1e-9);
        let zero = est.clone().with_sigma_hat(0.0).unwrap();
        assert_eq!(wald_interval(&a, &zero, &acc, 0.05).unwrap().half_width, 0.0);
        let iv2 = wald_interval(&[1.2, 1.6], &est, &acc, 0.05).unwrap();
        assert!((iv2.half_width - 2.0 * iv.half_width).abs() < 1e-12);
        assert!(wald_interval(&a, &ols(&acc).unwrap(), &acc, 0.05).is_err());
        assert!(wald_interval(&a, &est, &acc, 1.0).is_err());
    }

    #[test]
    fn rt_factor_examples() {
        assert_eq!(rt_factor(1.0, 1.0, 1.0, 1.0, 7, 0.0).unwrap(), 0.0);
        let v = rt_factor(500.0, 1.0, 1.0, 0.05, 50, 1.0).unwrap();
        let expected = (50.0 * 500f64.ln() + 20f64.ln()).sqrt() + 1.0;
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 18.71).abs() < 0.01);
        assert!(rt_factor(500.0, 1.0, 1.0, 0.05, 51, 1.0).unwrap() > v);
        assert!(rt_factor(500.0, 1.0, 1.0, 0.01, 50, 1.0).unwrap() > v);
    }

    #[test]
    fn aps_with_identity_design() {
        // V = lambda I + S = I when S = 0.
        let acc = GramAccumulator::new(3);
        let bundle = EstimateBundle {
            beta_hat: vec![0.0; 3],
            sigma_hat: None,
            kind: EstimatorKind::Ridge(1.0),
        };
        let a = [0.0, 1.0, 0.0];
        let iv = aps_interval(&a, &bundle, &acc, ApsParams::default(), 0.1).unwrap();
        let rt = rt_factor(1.0, 1.0, 1.0, 0.1, 3, 1.0).unwrap();
        assert!((iv.half_width - rt).abs() < 1e-14);
    }

    #[test]
    fn aps_wald_ratio_is_exact_on_matched_designs() {
        let mut rng = SimRng::seed_from_u64(9);
        let mut acc = GramAccumulator::new(4);
        for _ in 0..40 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-0.5..0.5)).collect();
            acc.accumulate_dense(&z, rng.random_range(-1.0..1.0)).unwrap();
        }
        let aps = ApsParams::default();
        let est = ridge(&acc, aps.lambda).unwrap().with_sigma_hat(0.3).unwrap();
        let a = [0.1, -0.4, 0.7, 0.2];
        let w = wald_interval(&a, &est, &acc, 0.05).unwrap();
        let p = aps_interval(&a, &est, &acc, aps, 0.05).unwrap();
        let rt = rt_factor(40.0, 1.0, 1.0, 0.05, 4, 1.0).unwrap();
        let ratio = p.half_width / w.half_width;
        assert!((ratio - rt / (two_sided_critical(0.05) * 0.3)).abs() < 1e-10);
        assert!(ratio >= 1.0);
    }

    #[test]
    fn standardized_stat_examples() {
        let acc = identity_acc(2, &[0.3, 0.4]);
        let est = ols(&acc).unwrap().with_sigma_hat(0.5).unwrap();
        assert_eq!(standardized_stat(&[1.0, 0.0], &est, &acc, &[0.3, 0.4]).unwrap(), 0.0);
        let s1 = standardized_stat(&[1.0, 2.0], &est, &acc, &[0.0, 0.0]).unwrap();
        let s2 = standardized_stat(&[-3.0, -6.0], &est, &acc, &[0.0, 0.0]).unwrap();
        assert!((s1 + s2).abs() < 1e-12);
        let zero = est.with_sigma_hat(0.0).unwrap();
        assert!(matches!(
            standardized_stat(&[1.0, 0.0], &zero, &acc, &[0.0, 0.0]),
            Err(Error::ZeroNoiseScale)
        ));
    }
}
