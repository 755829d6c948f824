use crate::error::{KeepError, Result};
use crate::nncore::sigmoid64;

pub const PROB_CLAMP: f64 = 1e-7;

/// Numerically stable `log(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Cross-entropy of one logit against a binary label, σ clamped to
/// `[1e-7, 1 - 1e-7]`.
#[inline]
pub fn pointwise_term(logit: f32, label: f32) -> f64 {
    let p = sigmoid64(logit as f64).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let c = label as f64;
    -c * p.ln() - (1.0 - c) * (1.0 - p).ln()
}

/// Summed pointwise cross-entropy.
pub fn pointwise_loss(logits: &[f32], labels: &[f32]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(KeepError::shape("pointwise_loss", logits.len(), labels.len()));
    }
    let mut total = 0.0;
    for (&s, &c) in logits.iter().zip(labels) {
        if c != 0.0 && c != 1.0 {
            return Err(KeepError::InvalidLabel(c));
        }
        total += pointwise_term(s, c);
    }
    Ok(total)
}

/// `log(1 + exp(-(s_pos - s_neg)))`.
#[inline]
pub fn pairwise_term(s_pos: f32, s_neg: f32) -> f64 {
    softplus(-(s_pos as f64 - s_neg as f64))
}

/// Summed pairwise logistic loss over `(s_ui, s_uj)` pairs.
pub fn pairwise_loss(pairs: &[(f32, f32)]) -> f64 {
    pairs.iter().map(|&(a, b)| pairwise_term(a, b)).sum()
}

pub fn hybrid_loss(point: f64, pair: f64, alpha: f64) -> f64 {
    point + alpha * pair
}
