use ptnn::{softmax, ParameterSet, Sequential, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadSource {
    Minute,
    Hour,
    Day,
    Orderbook,
}

impl HeadSource {
    pub const ALL: [HeadSource; 4] = [HeadSource::Minute, HeadSource::Hour, HeadSource::Day, HeadSource::Orderbook];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadSource::Minute => "minute",
            HeadSource::Hour => "hour",
            HeadSource::Day => "day",
            HeadSource::Orderbook => "orderbook",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadOutput {
    pub source: HeadSource,
    pub x: Vec<f64>,
}

/// Market-context vector `h` given to the attention scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionContext {
    pub h: Vec<f64>,
}

impl AttentionContext {
    /// `[trend score, normalized realized volatility]`.
    pub fn new(trend_score: f64, realized_vol: f64) -> Self {
        Self {
            h: vec![trend_score, realized_vol],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionResult {
    pub energies: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

pub(crate) fn scorer_input(x: &[f64], h: &[f64]) -> Tensor {
    let mut v = Vec::with_capacity(x.len() + h.len());
    v.extend_from_slice(x);
    v.extend_from_slice(h);
    Tensor::vector(v)
}

/// `c = Σ α_i x_i` in a fixed summation order.
pub(crate) fn weighted_sum(weights: &[f64], xs: &[&[f64]]) -> Vec<f64> {
    let d = xs[0].len();
    let mut c = vec![0.0; d];
    for (a, x) in weights.iter().zip(xs) {
        for k in 0..d {
            c[k] += a * x[k];
        }
    }
    c
}

/// Scores every head with the shared scorer, normalizes the energies with a
/// softmax and mixes the head vectors with the resulting weights.
pub fn attention(
    heads: &[HeadOutput],
    ctx: &AttentionContext,
    scorer: &Sequential,
    params: &ParameterSet,
) -> Result<AttentionResult> {
    let first = heads
        .first()
        .ok_or_else(|| CoreError::Invalid("attention needs at least one head".into()))?;
    let d = first.x.len();
    if let Some(h) = heads.iter().find(|h| h.x.len() != d) {
        return Err(CoreError::Shape(format!(
            "head {} has width {}, expected {d}",
            h.source.as_str(),
            h.x.len()
        )));
    }
    let mut energies = Vec::with_capacity(heads.len());
    for h in heads {
        let out = scorer.forward(params, &scorer_input(&h.x, &ctx.h))?;
        if out.len() != 1 {
            return Err(CoreError::Shape(format!("scorer emits {} values, expected 1", out.len())));
        }
        energies.push(out.values()[0]);
    }
    let weights = softmax(&energies)?;
    let xs: Vec<&[f64]> = heads.iter().map(|h| h.x.as_slice()).collect();
    let context = weighted_sum(&weights, &xs);
    Ok(AttentionResult {
        energies,
        weights,
        context,
    })
}

/// Attention-free fusion: the plain mean of head vectors.
pub fn mean_fusion(heads: &[HeadOutput]) -> Result<Vec<f64>> {
    let first = heads
        .first()
        .ok_or_else(|| CoreError::Invalid("fusion needs at least one head".into()))?;
    if heads.iter().any(|h| h.x.len() != first.x.len()) {
        return Err(CoreError::Shape("head widths differ".into()));
    }
    let w = vec![1.0 / heads.len() as f64; heads.len()];
    let xs: Vec<&[f64]> = heads.iter().map(|h| h.x.as_slice()).collect();
    Ok(weighted_sum(&w, &xs))
}
