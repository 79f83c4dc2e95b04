use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, otherwise
/// `1 / (1 - p)`. `p == 0` returns ones without touching the stream.
pub fn sample_dropout_mask(len: usize, p: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::OutOfRange(format!("dropout probability must be in [0, 1), got {p}")));
    }
    if p == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxXent {
    /// Cross entropy in nats.
    pub loss: f64,
    pub probs: Vec<f64>,
    /// Gradient of the loss with respect to the logits, `probs - onehot`.
    pub delta: Vec<f64>,
}

pub fn softmax_xent(logits: &[f64], target: usize) -> Result<SoftmaxXent> {
    if target >= logits.len() {
        return Err(Error::OutOfRange(format!("target {target} for {} classes", logits.len())));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    let loss = sum.ln() - (logits[target] - max);
    let mut delta = probs.clone();
    delta[target] -= 1.0;
    Ok(SoftmaxXent { loss, probs, delta })
}
