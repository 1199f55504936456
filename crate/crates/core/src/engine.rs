//! Regime-gated ensemble: trend score → model set → weighted vote,
//! consensus and combined confidence → thresholded action and size tier.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Timestamp;
use crate::direction::{AttentionContext, Direction, DirectionModel, DirectionPrediction};
use crate::error::{CoreError, Result};
use crate::features::{FeatureFrame, FrameUnavailable, UnavailableReason};
use crate::trend::TrendScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bearish,
    Neutral,
    Bullish,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Bearish, Regime::Neutral, Regime::Bullish];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Bearish => "bearish",
            Regime::Neutral => "neutral",
            Regime::Bullish => "bullish",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

/// Anything that can produce a direction prediction for a frame.
pub trait Predictor: Send + Sync {
    fn predict(&self, frame: &FeatureFrame, ctx: &AttentionContext) -> Result<DirectionPrediction>;
}

impl Predictor for DirectionModel {
    fn predict(&self, frame: &FeatureFrame, ctx: &AttentionContext) -> Result<DirectionPrediction> {
        DirectionModel::predict(self, frame, ctx)
    }
}

/// Predictor that ignores its input and returns a fixed class and confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPredictor {
    pub class: Direction,
    pub confidence: f64,
}

impl Predictor for FixedPredictor {
    fn predict(&self, _frame: &FeatureFrame, _ctx: &AttentionContext) -> Result<DirectionPrediction> {
        let mut probs = [(1.0 - self.confidence) / 2.0; 3];
        probs[self.class.index()] = self.confidence;
        Ok(DirectionPrediction {
            probs,
            predicted_class: self.class,
            confidence: self.confidence,
            head_weights: Vec::new(),
        })
    }
}

pub type SharedPredictor = Arc<dyn Predictor>;

/// Model sets per regime and the score cut points between regimes.
#[derive(Clone)]
pub struct RegimeBook {
    models: [Vec<SharedPredictor>; 3],
    pub t_bear: f64,
    pub t_bull: f64,
}

impl std::fmt::Debug for RegimeBook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegimeBook")
            .field("models", &self.models.each_ref().map(|m| m.len()))
            .field("t_bear", &self.t_bear)
            .field("t_bull", &self.t_bull)
            .finish()
    }
}

pub const DEFAULT_T_BEAR: f64 = -1.0 / 3.0;
pub const DEFAULT_T_BULL: f64 = 1.0 / 3.0;

impl RegimeBook {
    pub fn new(models: [Vec<SharedPredictor>; 3], t_bear: f64, t_bull: f64) -> Result<Self> {
        if models.iter().any(|m| m.is_empty()) {
            return Err(CoreError::Config("every regime needs at least one model".into()));
        }
        if !(-1.0 <= t_bear && t_bear < t_bull && t_bull <= 1.0) {
            return Err(CoreError::Config(format!(
                "need -1 <= t_bear < t_bull <= 1, got {t_bear}, {t_bull}"
            )));
        }
        Ok(Self { models, t_bear, t_bull })
    }

    /// Same model set in every regime.
    pub fn uniform(models: Vec<SharedPredictor>) -> Result<Self> {
        Self::new([models.clone(), models.clone(), models], DEFAULT_T_BEAR, DEFAULT_T_BULL)
    }

    pub fn models(&self, regime: Regime) -> &[SharedPredictor] {
        &self.models[regime.index()]
    }

    pub fn regime_of(&self, score: f64) -> Regime {
        if score < self.t_bear {
            Regime::Bearish
        } else if score > self.t_bull {
            Regime::Bullish
        } else {
            Regime::Neutral
        }
    }
}

pub fn select_networks(score: &TrendScore, book: &RegimeBook) -> (Regime, Vec<SharedPredictor>) {
    let regime = book.regime_of(score.value);
    (regime, book.models(regime).to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub threshold_high: f64,
    pub threshold_low: f64,
    /// Position sizes as fractions of equity.
    pub size_large: f64,
    pub size_small: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            threshold_high: 0.70,
            threshold_low: 0.55,
            size_large: 0.10,
            size_small: 0.05,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self, max_position_fraction: f64) -> Result<()> {
        if !(0.0 < self.threshold_low && self.threshold_low < self.threshold_high && self.threshold_high <= 1.0) {
            return Err(CoreError::Config(format!(
                "need 0 < threshold_low < threshold_high <= 1, got {}, {}",
                self.threshold_low, self.threshold_high
            )));
        }
        if !(0.0 < self.size_small && self.size_small < self.size_large && self.size_large <= max_position_fraction) {
            return Err(CoreError::Config(format!(
                "need 0 < size_small < size_large <= {max_position_fraction}, got {}, {}",
                self.size_small, self.size_large
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Buy,
    Sell,
    Hold,
    NoAction,
}

impl Action {
    pub fn from_direction(d: Direction) -> Self {
        match d {
            Direction::Buy => Action::Buy,
            Direction::Sell => Action::Sell,
            Direction::Hold => Action::Hold,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Buy => "buy",
            Action::Sell => "sell",
            Action::Hold => "hold",
            Action::NoAction => "no_action",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeTier {
    Large,
    Small,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoActionReason {
    Gap,
    InsufficientHistory,
    Stale,
    Depth,
    NonFinite,
    LowConfidence,
    ModelError,
}

impl NoActionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            NoActionReason::Gap => "gap",
            NoActionReason::InsufficientHistory => "insufficient_history",
            NoActionReason::Stale => "stale",
            NoActionReason::Depth => "depth",
            NoActionReason::NonFinite => "non_finite",
            NoActionReason::LowConfidence => "low_confidence",
            NoActionReason::ModelError => "model_error",
        }
    }
}

impl From<UnavailableReason> for NoActionReason {
    fn from(r: UnavailableReason) -> Self {
        match r {
            UnavailableReason::Gap => NoActionReason::Gap,
            UnavailableReason::InsufficientHistory => NoActionReason::InsufficientHistory,
            UnavailableReason::Stale => NoActionReason::Stale,
            UnavailableReason::Depth => NoActionReason::Depth,
            UnavailableReason::NonFinite => NoActionReason::NonFinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelVote {
    pub class: Direction,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDecision {
    pub ts: Timestamp,
    pub regime: Option<Regime>,
    pub trend_score: Option<f64>,
    pub votes: Vec<ModelVote>,
    /// Class chosen by the weighted vote, before thresholding.
    pub ensemble_class: Option<Direction>,
    pub consensus: f64,
    pub final_confidence: f64,
    pub action: Action,
    pub size_tier: SizeTier,
    /// Equity fraction for the tier (0 for no-action).
    pub size_fraction: f64,
    pub reason: Option<NoActionReason>,
}

impl EnsembleDecision {
    pub fn no_action(ts: Timestamp, reason: NoActionReason) -> Self {
        Self {
            ts,
            regime: None,
            trend_score: None,
            votes: Vec::new(),
            ensemble_class: None,
            consensus: 0.0,
            final_confidence: 0.0,
            action: Action::NoAction,
            size_tier: SizeTier::None,
            size_fraction: 0.0,
            reason: Some(reason),
        }
    }

    pub fn unavailable(ts: Timestamp, why: &FrameUnavailable) -> Self {
        Self::no_action(ts, why.reason.into())
    }

    /// Whether the ensemble ran (as opposed to a degraded-input fallback).
    pub fn evaluated(&self) -> bool {
        !self.votes.is_empty()
    }

    pub fn mean_model_confidence(&self) -> Option<f64> {
        if self.votes.is_empty() {
            return None;
        }
        Some(self.votes.iter().map(|v| v.confidence).sum::<f64>() / self.votes.len() as f64)
    }

    /// Equivalence used by the oracle comparison (exact on every field).
    pub fn same_as(&self, other: &Self) -> bool {
        self == other
    }
}

/// Class with the largest confidence sum; any tie for the top sum yields hold.
pub fn weighted_vote(predictions: &[Direction], confidences: &[f64]) -> Result<Direction> {
    if predictions.is_empty() || predictions.len() != confidences.len() {
        return Err(CoreError::Invalid("vote needs equal-length, non-empty inputs".into()));
    }
    let mut sums = [0.0f64; 3];
    for (p, c) in predictions.iter().zip(confidences) {
        sums[p.index()] += c;
    }
    let top = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let winners: Vec<usize> = (0..3).filter(|i| sums[*i] == top).collect();
    Ok(if winners.len() == 1 {
        Direction::from_index(winners[0]).expect("class index")
    } else {
        Direction::Hold
    })
}

/// Share of models that agree with the modal class (lowest index on modal ties).
pub fn consensus(predictions: &[Direction]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(CoreError::Invalid("consensus of no predictions".into()));
    }
    let mut counts = [0usize; 3];
    for p in predictions {
        counts[p.index()] += 1;
    }
    let modal = counts.iter().max().copied().unwrap_or(0);
    Ok(modal as f64 / predictions.len() as f64)
}

pub fn combine_scores(confidences: &[f64], consensus: f64) -> Result<f64> {
    if confidences.is_empty() {
        return Err(CoreError::Invalid("no confidences to combine".into()));
    }
    let mean = confidences.iter().sum::<f64>() / confidences.len() as f64;
    Ok((mean * consensus).clamp(0.0, 1.0))
}

/// Full ensemble decision. Degraded inputs produce `NoAction` with a reason,
/// never an error.
pub fn decide(
    frame: std::result::Result<&FeatureFrame, &FrameUnavailable>,
    ctx: &AttentionContext,
    score: &TrendScore,
    book: &RegimeBook,
    thresholds: &ThresholdConfig,
) -> EnsembleDecision {
    let ts = score.ts;
    let frame = match frame {
        Ok(f) => f,
        Err(why) => return EnsembleDecision::unavailable(ts, why),
    };
    if !score.value.is_finite() || ctx.h.iter().any(|v| !v.is_finite()) {
        return EnsembleDecision::no_action(ts, NoActionReason::NonFinite);
    }
    let (regime, models) = select_networks(score, book);
    let mut votes = Vec::with_capacity(models.len());
    for m in &models {
        match m.predict(frame, ctx) {
            Ok(p) if p.confidence.is_finite() && (0.0..=1.0).contains(&p.confidence) => votes.push(ModelVote {
                class: p.predicted_class,
                confidence: p.confidence,
            }),
            _ => return EnsembleDecision::no_action(ts, NoActionReason::ModelError),
        }
    }
    let classes: Vec<Direction> = votes.iter().map(|v| v.class).collect();
    let confs: Vec<f64> = votes.iter().map(|v| v.confidence).collect();
    let class = weighted_vote(&classes, &confs).expect("non-empty model set");
    let agreement = consensus(&classes).expect("non-empty model set");
    let final_confidence = combine_scores(&confs, agreement).expect("non-empty model set");
    let (action, size_tier, size_fraction, reason) = if final_confidence > thresholds.threshold_high {
        (Action::from_direction(class), SizeTier::Large, thresholds.size_large, None)
    } else if final_confidence > thresholds.threshold_low {
        (Action::from_direction(class), SizeTier::Small, thresholds.size_small, None)
    } else {
        (Action::NoAction, SizeTier::None, 0.0, Some(NoActionReason::LowConfidence))
    };
    EnsembleDecision {
        ts,
        regime: Some(regime),
        trend_score: Some(score.value),
        votes,
        ensemble_class: Some(class),
        consensus: agreement,
        final_confidence,
        action,
        size_tier,
        size_fraction,
        reason,
    }
}

/// Independent reference implementation of [`decide`] by direct enumeration.
pub fn decide_bruteforce(
    frame: std::result::Result<&FeatureFrame, &FrameUnavailable>,
    ctx: &AttentionContext,
    score: &TrendScore,
    book: &RegimeBook,
    thresholds: &ThresholdConfig,
) -> EnsembleDecision {
    let ts = score.ts;
    let Ok(frame) = frame else {
        let why = frame.err().expect("error branch");
        let reason = match why.reason {
            UnavailableReason::Gap => NoActionReason::Gap,
            UnavailableReason::InsufficientHistory => NoActionReason::InsufficientHistory,
            UnavailableReason::Stale => NoActionReason::Stale,
            UnavailableReason::Depth => NoActionReason::Depth,
            UnavailableReason::NonFinite => NoActionReason::NonFinite,
        };
        return EnsembleDecision::no_action(ts, reason);
    };
    if score.value.is_nan() || score.value.is_infinite() || ctx.h.iter().any(|v| v.is_nan() || v.is_infinite()) {
        return EnsembleDecision::no_action(ts, NoActionReason::NonFinite);
    }
    let regime = if score.value > book.t_bull {
        Regime::Bullish
    } else if score.value >= book.t_bear {
        Regime::Neutral
    } else {
        Regime::Bearish
    };
    let mut votes = Vec::new();
    for m in book.models(regime) {
        let Ok(p) = m.predict(frame, ctx) else {
            return EnsembleDecision::no_action(ts, NoActionReason::ModelError);
        };
        if !(p.confidence >= 0.0 && p.confidence <= 1.0) {
            return EnsembleDecision::no_action(ts, NoActionReason::ModelError);
        }
        votes.push(ModelVote {
            class: p.predicted_class,
            confidence: p.confidence,
        });
    }
    let n = votes.len();

    // vote: enumerate classes, keep the unique best or fall back to hold
    let mut best: Option<(Direction, f64)> = None;
    let mut tied = false;
    for class in Direction::ALL {
        let mut total = 0.0;
        for v in &votes {
            if v.class == class {
                total += v.confidence;
            }
        }
        match best {
            None => best = Some((class, total)),
            Some((_, b)) if total > b => {
                best = Some((class, total));
                tied = false;
            }
            Some((_, b)) if total == b => tied = true,
            _ => {}
        }
    }
    let class = if tied { Direction::Hold } else { best.expect("three classes").0 };

    let mut modal = 0;
    for class in Direction::ALL {
        let c = votes.iter().filter(|v| v.class == class).count();
        if c > modal {
            modal = c;
        }
    }
    let agreement = modal as f64 / n as f64;
    let mut conf_sum = 0.0;
    for v in &votes {
        conf_sum += v.confidence;
    }
    let final_confidence = (conf_sum / n as f64 * agreement).clamp(0.0, 1.0);

    let mut decision = EnsembleDecision {
        ts,
        regime: Some(regime),
        trend_score: Some(score.value),
        votes,
        ensemble_class: Some(class),
        consensus: agreement,
        final_confidence,
        action: Action::NoAction,
        size_tier: SizeTier::None,
        size_fraction: 0.0,
        reason: Some(NoActionReason::LowConfidence),
    };
    if final_confidence > thresholds.threshold_low {
        decision.action = match class {
            Direction::Buy => Action::Buy,
            Direction::Sell => Action::Sell,
            Direction::Hold => Action::Hold,
        };
        decision.reason = None;
        let large = final_confidence > thresholds.threshold_high;
        decision.size_tier = if large { SizeTier::Large } else { SizeTier::Small };
        decision.size_fraction = if large { thresholds.size_large } else { thresholds.size_small };
    }
    decision
}

/// One JSON line per decision.
pub fn write_decisions_jsonl(path: &Path, decisions: &[EnsembleDecision]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for d in decisions {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n").map_err(|e| CoreError::io(path, e))?;
    }
    w.flush().map_err(|e| CoreError::io(path, e))
}
