use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use crate::data::{MarketData, NormalizationSpec, Timestamp};
use crate::direction::AttentionContext;
use crate::engine::{decide, Action, EnsembleDecision, NoActionReason, RegimeBook, SizeTier, ThresholdConfig};
use crate::features::FrameAssembler;
use crate::seed::{stage_rng, StageRng};
use crate::trend::{evaluate_trend, trend_inputs, TrendNet};

/// Produces one decision per tick from the data observable at that tick.
pub trait DecisionSource {
    fn decide(&mut self, data: &MarketData, ts: Timestamp) -> EnsembleDecision;
}

/// Wall-clock split of one engine decision, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTiming {
    pub assembly: f64,
    pub trend: f64,
    pub decide: f64,
}

impl StageTiming {
    pub fn pipeline(&self) -> f64 {
        self.assembly + self.trend + self.decide
    }
}

/// Full engine: frame assembly, trend scoring, regime-gated ensemble.
pub struct EnginePolicy {
    pub assembler: FrameAssembler,
    pub trend: TrendNet,
    pub trend_spec: NormalizationSpec,
    pub trend_max_age_ms: i64,
    pub book: RegimeBook,
    pub thresholds: ThresholdConfig,
    pub last_timing: StageTiming,
}

impl EnginePolicy {
    pub fn new(
        assembler: FrameAssembler,
        trend: TrendNet,
        book: RegimeBook,
        thresholds: ThresholdConfig,
    ) -> Self {
        let trend_spec = assembler.spec().clone();
        let trend_max_age_ms = assembler.config().context_max_age_ms.max(assembler.config().onchain_max_age_ms);
        Self {
            assembler,
            trend,
            trend_spec,
            trend_max_age_ms,
            book,
            thresholds,
            last_timing: StageTiming::default(),
        }
    }

    /// Attention context for `ts`, or the reason it is unavailable.
    pub fn context(&self, data: &MarketData, ts: Timestamp, realized_vol: f64) -> Result<(f64, AttentionContext), NoActionReason> {
        let inputs = trend_inputs(data, ts, &self.trend_spec, self.trend_max_age_ms).map_err(|u| NoActionReason::from(u.reason))?;
        let score = evaluate_trend(&inputs, ts, &self.trend).map_err(|_| NoActionReason::NonFinite)?;
        Ok((score.value, AttentionContext::new(score.value, realized_vol)))
    }
}

impl DecisionSource for EnginePolicy {
    fn decide(&mut self, data: &MarketData, ts: Timestamp) -> EnsembleDecision {
        let t0 = Instant::now();
        let frame = self.assembler.assemble(data, ts);
        let t1 = Instant::now();
        let frame = match frame {
            Ok(f) => f,
            Err(why) => {
                self.last_timing = StageTiming {
                    assembly: (t1 - t0).as_secs_f64(),
                    ..Default::default()
                };
                return EnsembleDecision::unavailable(ts, &why);
            }
        };
        let ctx = self.context(data, ts, frame.realized_vol);
        let t2 = Instant::now();
        let decision = match ctx {
            Ok((score, ctx)) => decide(
                Ok(&frame),
                &ctx,
                &crate::trend::TrendScore { value: score, ts },
                &self.book,
                &self.thresholds,
            ),
            Err(reason) => EnsembleDecision::no_action(ts, reason),
        };
        let t3 = Instant::now();
        self.last_timing = StageTiming {
            assembly: (t1 - t0).as_secs_f64(),
            trend: (t2 - t1).as_secs_f64(),
            decide: (t3 - t2).as_secs_f64(),
        };
        decision
    }
}

/// Baseline that enters in a random direction with probability `entry_prob` per tick.
pub struct RandomPolicy {
    rng: StageRng,
    pub entry_prob: f64,
    pub size_fraction: f64,
}

impl RandomPolicy {
    pub fn new(seed: u64, entry_prob: f64, size_fraction: f64) -> Self {
        Self {
            rng: stage_rng(seed, "random_policy"),
            entry_prob,
            size_fraction,
        }
    }
}

impl DecisionSource for RandomPolicy {
    fn decide(&mut self, _data: &MarketData, ts: Timestamp) -> EnsembleDecision {
        let u: f64 = self.rng.random();
        let action = if u < self.entry_prob / 2.0 {
            Action::Buy
        } else if u < self.entry_prob {
            Action::Sell
        } else {
            return EnsembleDecision::no_action(ts, NoActionReason::LowConfidence);
        };
        EnsembleDecision {
            action,
            size_tier: SizeTier::Small,
            size_fraction: self.size_fraction,
            reason: None,
            ..EnsembleDecision::no_action(ts, NoActionReason::LowConfidence)
        }
    }
}

/// Replays fixed decisions; every other tick is no-action.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    pub script: BTreeMap<Timestamp, (Action, f64)>,
}

impl ScriptedPolicy {
    pub fn new(script: impl IntoIterator<Item = (Timestamp, Action, f64)>) -> Self {
        Self {
            script: script.into_iter().map(|(ts, a, f)| (ts, (a, f))).collect(),
        }
    }
}

impl DecisionSource for ScriptedPolicy {
    fn decide(&mut self, _data: &MarketData, ts: Timestamp) -> EnsembleDecision {
        match self.script.get(&ts) {
            Some(&(action, fraction)) if action != Action::NoAction => EnsembleDecision {
                action,
                size_tier: SizeTier::Large,
                size_fraction: fraction,
                reason: None,
                ..EnsembleDecision::no_action(ts, NoActionReason::LowConfidence)
            },
            _ => EnsembleDecision::no_action(ts, NoActionReason::LowConfidence),
        }
    }
}
