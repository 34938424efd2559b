use crate::model::linear::Linear;
use crate::model::ModelError;

/// One attribute head: logits `W_h v + b_h` and its class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationHead {
    pub name: String,
    pub linear: Linear,
    pub class_weights: Vec<f64>,
}

impl ClassificationHead {
    pub fn n_classes(&self) -> usize {
        self.linear.out_dim
    }
}

/// Per-head logits for one image feature.
pub fn forward_heads(v: &[f64], heads: &[ClassificationHead]) -> Result<Vec<Vec<f64>>, ModelError> {
    heads
        .iter()
        .map(|h| {
            if h.linear.in_dim != v.len() {
                return Err(ModelError::DimensionMismatch {
                    what: "image feature",
                    expected: h.linear.in_dim,
                    got: v.len(),
                });
            }
            Ok(h.linear.forward(v))
        })
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `w[y] * -log softmax(logits)[y]` and its gradient `w[y] * (softmax - onehot(y))`.
pub fn weighted_ce(logits: &[f64], y: usize, weights: &[f64]) -> (f64, Vec<f64>) {
    let lse = log_sum_exp(logits.iter().copied());
    let w = weights[y];
    let loss = w * (lse - logits[y]);
    let grad = logits
        .iter()
        .enumerate()
        .map(|(k, l)| w * ((l - lse).exp() - if k == y { 1.0 } else { 0.0 }))
        .collect();
    (loss, grad)
}

/// Inverse class frequency, scaled to mean 1. Unseen classes count once.
pub fn inverse_frequency_weights(labels: impl Iterator<Item = usize>, n_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        counts[l] += 1;
    }
    let inv: Vec<f64> = counts.iter().map(|&c| 1.0 / c.max(1) as f64).collect();
    let mean = inv.iter().sum::<f64>() / n_classes as f64;
    inv.into_iter().map(|w| w / mean).collect()
}
