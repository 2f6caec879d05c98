use crate::error::{Error, Result};
use crate::tensor::Mat;

const TARGET_TOL: f64 = 1e-9;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// `-sum(target * log_softmax(logits))` for a soft target.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> Result<f64> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(Error::invalid(
            "logits and target must have the same nonzero length",
        ));
    }
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(Error::invalid("non-finite logits"));
    }
    let sum: f64 = target.iter().sum();
    if target.iter().any(|&t| !(t >= 0.0)) || (sum - 1.0).abs() > TARGET_TOL {
        return Err(Error::invalid(format!(
            "target is not a distribution (sum {sum})"
        )));
    }
    let lse = log_sum_exp(logits);
    Ok(target
        .iter()
        .zip(logits)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &z)| t * (lse - z))
        .sum())
}

/// `lambda * CE(own) + (1 - lambda) * CE(partner) + reg_weight * tnet_reg`.
pub fn mixed_objective(
    logits: &[f64],
    own: &[f64],
    partner: &[f64],
    lambda: f64,
    tnet_reg: f64,
    reg_weight: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda = {lambda} outside [0, 1]")));
    }
    Ok(lambda * cross_entropy(logits, own)?
        + (1.0 - lambda) * cross_entropy(logits, partner)?
        + reg_weight * tnet_reg)
}

/// Mean per-point cross-entropy of N x C logits against hard labels.
pub fn segmentation_loss(logits: &Mat, labels: &[usize]) -> Result<f64> {
    if labels.len() != logits.rows() || labels.is_empty() {
        return Err(Error::invalid("one label per point required"));
    }
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = logits.row(i);
        if l >= row.len() {
            return Err(Error::invalid(format!(
                "part label {l} outside {} classes",
                row.len()
            )));
        }
        total += log_sum_exp(row) - row[l];
    }
    Ok(total / labels.len() as f64)
}
