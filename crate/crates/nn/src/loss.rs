use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{NnError, Result};
use crate::params::ParameterSet;

/// Floor applied to the label probability before taking its log.
pub const LOG_EPSILON: f64 = 1e-12;

static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

/// How many times [`loss`] has clamped a zero label probability (process-wide).
pub fn clamp_events() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_l2: f64,
    pub class_count: usize,
}

impl LossConfig {
    pub fn new(lambda_l2: f64, class_count: usize) -> Result<Self> {
        if !(lambda_l2 >= 0.0) || !lambda_l2.is_finite() {
            return Err(NnError::InvalidInput(format!("lambda_l2 must be >= 0, got {lambda_l2}")));
        }
        if class_count == 0 {
            return Err(NnError::InvalidInput("class_count must be positive".into()));
        }
        Ok(Self {
            lambda_l2,
            class_count,
        })
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(NnError::InvalidInput("softmax of empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(NnError::InvalidInput(format!("softmax input contains {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(grad_out).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

/// Index of the largest entry; ties go to the lowest index. `None` on empty input.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

fn label_prob(probs: &[f64], label: usize, cfg: &LossConfig) -> Result<(f64, bool)> {
    if probs.len() != cfg.class_count {
        return Err(NnError::InvalidInput(format!(
            "expected {} class probabilities, got {}",
            cfg.class_count,
            probs.len()
        )));
    }
    if label >= cfg.class_count {
        return Err(NnError::InvalidInput(format!(
            "label {label} out of range for {} classes",
            cfg.class_count
        )));
    }
    let p = probs[label];
    if p < LOG_EPSILON {
        Ok((LOG_EPSILON, true))
    } else {
        Ok((p, false))
    }
}

/// Cross-entropy of `probs` at `label` plus `λ·Σw²` over the trainable weights.
pub fn loss(probs: &[f64], label: usize, params: &ParameterSet, cfg: &LossConfig) -> Result<f64> {
    let (p, clamped) = label_prob(probs, label, cfg)?;
    if clamped {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
    }
    Ok(-p.ln() + cfg.lambda_l2 * params.l2_sum())
}

/// Mean of per-sample losses over a batch of `(probs, label)` pairs.
pub fn batch_loss(batch: &[(Vec<f64>, usize)], params: &ParameterSet, cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(NnError::InvalidInput("empty batch".into()));
    }
    let mut total = 0.0;
    for (probs, label) in batch {
        total += loss(probs, *label, params, cfg)?;
    }
    Ok(total / batch.len() as f64)
}

/// d(−ln p[label]) / d(probs). Zero when the probability was clamped.
pub fn cross_entropy_grad(probs: &[f64], label: usize, cfg: &LossConfig) -> Result<Vec<f64>> {
    let (p, clamped) = label_prob(probs, label, cfg)?;
    let mut g = vec![0.0; probs.len()];
    if !clamped {
        g[label] = -1.0 / p;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamRole;
    use crate::tensor::Tensor;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_ln2_hand_value() {
        let p = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(softmax(&[]).is_err());
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn argmax_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), Some(1));
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), Some(0));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn loss_examples() {
        let cfg0 = LossConfig::new(0.0, 3).unwrap();
        let empty = ParameterSet::new();
        assert_eq!(loss(&[1.0, 0.0, 0.0], 0, &empty, &cfg0).unwrap(), 0.0);
        let third = 1.0 / 3.0;
        for label in 0..3 {
            let l = loss(&[third, third, third], label, &empty, &cfg0).unwrap();
            assert!((l - 1.098612).abs() < 1e-6);
            assert!((l - 3f64.ln()).abs() < 1e-12);
        }

        let mut w = ParameterSet::new();
        w.insert("w", Tensor::vector(vec![2.0]), ParamRole::Weight).unwrap();
        let cfg = LossConfig::new(0.1, 3).unwrap();
        let l = loss(&[1.0, 0.0, 0.0], 0, &w, &cfg).unwrap();
        assert!((l - 0.4).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_is_clamped_not_an_error() {
        let cfg = LossConfig::new(0.0, 3).unwrap();
        let before = clamp_events();
        let l = loss(&[0.0, 1.0, 0.0], 0, &ParameterSet::new(), &cfg).unwrap();
        assert!((l - (-(LOG_EPSILON.ln()))).abs() < 1e-9);
        assert!(clamp_events() > before);
    }

    #[test]
    fn label_out_of_range_is_rejected() {
        let cfg = LossConfig::new(0.0, 3).unwrap();
        assert!(loss(&[0.2, 0.3, 0.5], 3, &ParameterSet::new(), &cfg).is_err());
        assert!(LossConfig::new(-1.0, 3).is_err());
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let cfg = LossConfig::new(0.0, 3).unwrap();
        let params = ParameterSet::new();
        let batch = vec![
            (vec![0.2, 0.3, 0.5], 0),
            (vec![0.6, 0.3, 0.1], 1),
            (vec![0.1, 0.1, 0.8], 2),
        ];
        let mean = batch
            .iter()
            .map(|(p, l)| loss(p, *l, &params, &cfg).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((batch_loss(&batch, &params, &cfg).unwrap() - mean).abs() < 1e-12);
    }
}
