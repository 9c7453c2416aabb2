//! Negative-entropy mirror map `phi(w) = sum w log w - w`, its Fenchel dual
//! `phi*(y) = sum exp(y)`, and the induced Bregman divergences.

use crate::error::{Error, Result};

fn check_positive(v: &[f64]) -> Result<()> {
    match v.iter().position(|&x| !(x > 0.0)) {
        Some(index) => Err(Error::NonPositiveEntry {
            index,
            value: v[index],
        }),
        None => Ok(()),
    }
}

pub fn phi(w: &[f64]) -> f64 {
    w.iter().map(|&x| x * x.ln() - x).sum()
}

pub fn grad_phi(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.ln()).collect()
}

pub fn phi_star(y: &[f64]) -> f64 {
    y.iter().map(|v| v.exp()).sum()
}

pub fn grad_phi_star(y: &[f64]) -> Vec<f64> {
    y.iter().map(|v| v.exp()).collect()
}

/// `D_phi(u, v) = sum u log(u/v) - u + v` for strictly positive `u`, `v`.
pub fn bregman_div_phi(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    check_positive(u)?;
    check_positive(v)?;
    Ok(u
        .iter()
        .zip(v)
        .map(|(&a, &b)| a * (a / b).ln() - a + b)
        .sum())
}

/// `D_{phi*}(p, q) = phi*(p) - phi*(q) - <grad phi*(q), p - q>`.
pub fn bregman_div_phi_star(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    Ok(p
        .iter()
        .zip(q)
        .map(|(&a, &b)| a.exp() - b.exp() - b.exp() * (a - b))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_values() {
        assert_eq!(bregman_div_phi(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let d = bregman_div_phi(&[0.5, 0.5], &[0.25, 0.75]).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.143_841_036_225_890_2).abs() < 1e-12);
        let d = bregman_div_phi(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!((d - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(matches!(
            bregman_div_phi(&[0.0, 1.0], &[0.5, 0.5]),
            Err(Error::NonPositiveEntry { index: 0, .. })
        ));
        assert!(bregman_div_phi(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn dual_gradients_invert() {
        let w = [0.2, 0.3, 0.5];
        let back = grad_phi_star(&grad_phi(&w));
        for (a, b) in w.iter().zip(&back) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((phi_star(&grad_phi(&w)) - 1.0).abs() < 1e-15);
        assert!(phi(&w) < 0.0);
    }
}
