//! Temperature-scaled binary cross-entropy on positive-class logits.
//!
//! With `u = z / tau` the per-sample loss is `softplus(-u)` for a positive
//! and `softplus(u)` for a negative label, which avoids evaluating
//! `log(1 - sigmoid(u))` directly.

use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check(logits: &[f64], labels: &[u8], tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be > 0, got {tau}")));
    }
    if logits.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} logits for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    Ok(())
}

/// Mean of `-[y log s(z/tau) + (1-y) log(1 - s(z/tau))]`.
pub fn temperature_bce_loss(logits: &[f64], labels: &[u8], tau: f64) -> Result<f64> {
    check(logits, labels, tau)?;
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let u = z / tau;
            if y == 1 {
                softplus(-u)
            } else {
                softplus(u)
            }
        })
        .sum();
    Ok(total / logits.len() as f64)
}

/// Gradient of [`temperature_bce_loss`] with respect to each logit:
/// `(s(z/tau) - y) / (tau * N)`.
pub fn temperature_bce_grad(logits: &[f64], labels: &[u8], tau: f64) -> Result<Vec<f64>> {
    check(logits, labels, tau)?;
    let scale = 1.0 / (tau * logits.len() as f64);
    Ok(logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| (sigmoid(z / tau) - f64::from(y)) * scale)
        .collect())
}

/// Plain binary cross-entropy on probabilities.
pub fn binary_cross_entropy(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::invalid("probabilities and labels must be non-empty and equal length"));
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let y = f64::from(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / probs.len() as f64)
}
