//! Exact KL (Bregman) projection onto the floored simplex
//! `{w : sum w = 1, w_k >= eps}`.
//!
//! The minimizer of `D_phi(w, v)` has the water-filling form
//! `w_k = max(eps, gamma * v_k)`. Working with `s_k = log v_k`, the
//! unclamped set is always a top segment of `s` in descending order, so
//! `gamma` is found by scanning the `K` candidate segments; bisection on
//! `log gamma` is the fallback when rounding defeats the scan.

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

pub(crate) fn check_floor(num_experts: usize, eps: f64) -> Result<()> {
    if num_experts == 0 {
        return Err(Error::InvalidParameter("need at least one expert".into()));
    }
    if !(eps > 0.0) || !eps.is_finite() || num_experts as f64 * eps > 1.0 + SUM_TOL {
        return Err(Error::InfeasibleFloor {
            num_experts,
            eps_floor: eps,
        });
    }
    Ok(())
}

/// Solves `sum_k max(eps, exp(log_gamma + s_k)) = 1` and returns the weights.
pub(crate) fn water_fill_log(s: &[f64], eps: f64) -> Result<Vec<f64>> {
    let k = s.len();
    check_floor(k, eps)?;
    if let Some(index) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::ExponentOutOfRange(s[index]));
    }
    if (k as f64 * eps - 1.0).abs() <= SUM_TOL {
        return Ok(vec![1.0 / k as f64; k]);
    }

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
    let top = s[order[0]];
    let log_eps = eps.ln();

    // Scan segment sizes m = 1..=K; sum_rel accumulates exp(s - top) over the segment.
    let mut sum_rel = 0.0;
    let mut solution = None;
    for m in 1..=k {
        sum_rel += (s[order[m - 1]] - top).exp();
        let mass = 1.0 - (k - m) as f64 * eps;
        if mass <= 0.0 {
            continue;
        }
        let log_gamma = mass.ln() - top - sum_rel.ln();
        let smallest_in = log_gamma + s[order[m - 1]];
        let largest_out = if m < k {
            log_gamma + s[order[m]]
        } else {
            f64::NEG_INFINITY
        };
        if smallest_in >= log_eps && largest_out <= log_eps {
            solution = Some((m, log_gamma));
            break;
        }
    }

    if let Some((m, log_gamma)) = solution {
        let mut w = vec![eps; k];
        for &i in &order[..m] {
            w[i] = (log_gamma + s[i]).exp();
        }
        if (w.iter().sum::<f64>() - 1.0).abs() <= SUM_TOL {
            return Ok(w);
        }
    }
    Ok(bisect(s, eps))
}

fn bisect(s: &[f64], eps: f64) -> Vec<f64> {
    let top = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eval = |lg: f64| -> f64 { s.iter().map(|&v| eps.max((lg + v).exp())).sum::<f64>() };
    // At lo every coordinate is clamped (sum = K eps <= 1); at hi the top one alone reaches 1.
    let (mut lo, mut hi) = (eps.ln() - top, -top);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let lg = 0.5 * (lo + hi);
    let mut w: Vec<f64> = s.iter().map(|&v| eps.max((lg + v).exp())).collect();
    // Spread the residual over the unclamped coordinates.
    let free: f64 = w.iter().filter(|&&x| x > eps).sum();
    if free > 0.0 {
        let clamped = w.iter().filter(|&&x| x <= eps).count() as f64 * eps;
        let scale = (1.0 - clamped) / free;
        w.iter_mut().filter(|x| **x > eps).for_each(|x| *x *= scale);
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_agrees_with_scan() {
        let s = [0.3f64.ln(), 0.01f64.ln(), 2.0f64.ln(), 0.05f64.ln()];
        let scan = water_fill_log(&s, 0.05).unwrap();
        let bis = bisect(&s, 0.05);
        for (a, b) in scan.iter().zip(&bis) {
            assert!((a - b).abs() < 1e-12, "{scan:?} vs {bis:?}");
        }
    }

    #[test]
    fn full_floor_gives_uniform() {
        let w = water_fill_log(&[0.0, 5.0, -3.0, 1.0], 0.25).unwrap();
        assert_eq!(w, vec![0.25; 4]);
    }

    #[test]
    fn infeasible_floor() {
        assert!(matches!(
            water_fill_log(&[0.0, 0.0], 0.6),
            Err(Error::InfeasibleFloor { .. })
        ));
        assert!(water_fill_log(&[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn extreme_spread_in_log_space() {
        // exp(-5000) underflows, the log-space solve does not care.
        let w = water_fill_log(&[0.0, -5000.0, -10.0], 1e-4).unwrap();
        assert_eq!(w[1], 1e-4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
