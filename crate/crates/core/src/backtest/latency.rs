use std::collections::BTreeMap;
use std::time::Instant;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::policy::{DecisionSource, EnginePolicy};
use crate::data::{MarketData, Timestamp};
use crate::direction::AttentionContext;
use crate::error::{CoreError, Result};
use crate::seed::stage_rng;

/// Simulated order round trip to the exchange, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeDelay {
    pub mean_ms: f64,
    pub jitter_ms: f64,
}

impl ExchangeDelay {
    pub fn fixed(ms: f64) -> Self {
        Self {
            mean_ms: ms,
            jitter_ms: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentiles of samples given in milliseconds.
pub fn percentiles(samples_ms: &[f64]) -> Option<Percentiles> {
    if samples_ms.is_empty() {
        return None;
    }
    let mut s = samples_ms.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
    Some(Percentiles {
        samples: s.len(),
        mean_ms: s.iter().sum::<f64>() / s.len() as f64,
        p50_ms: rank(0.50),
        p99_ms: rank(0.99),
        max_ms: *s.last().expect("non-empty"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frames: usize,
    pub repetitions: usize,
    pub exchange_delay: ExchangeDelay,
    /// Keyed by stage: assembly, trend, predict, decide, pipeline, end_to_end.
    pub stages: BTreeMap<String, Percentiles>,
}

impl LatencyReport {
    pub fn stage(&self, name: &str) -> Option<&Percentiles> {
        self.stages.get(name)
    }
}

/// Times every stage of the engine at each tick in `ticks`, `repetitions`
/// times, after one warm-up pass. Ticks where no frame can be built are skipped.
pub fn measure_latency(
    engine: &mut EnginePolicy,
    data: &MarketData,
    ticks: &[Timestamp],
    repetitions: usize,
    delay: ExchangeDelay,
    seed: u64,
) -> Result<LatencyReport> {
    if !(delay.mean_ms >= 0.0) || !(delay.jitter_ms >= 0.0) {
        return Err(CoreError::Config("exchange delay must be >= 0".into()));
    }
    let normal = (delay.jitter_ms > 0.0).then(|| Normal::new(delay.mean_ms, delay.jitter_ms).expect("valid normal"));
    let mut rng = stage_rng(seed, "latency.exchange");
    let usable: Vec<Timestamp> = ticks
        .iter()
        .copied()
        .filter(|ts| engine.assembler.assemble(data, *ts).is_ok())
        .collect();
    for ts in &usable {
        engine.decide(data, *ts);
    }
    let mut stages: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for _ in 0..repetitions {
        for &ts in &usable {
            engine.decide(data, ts);
            let t = engine.last_timing;
            let pipeline = t.pipeline() * 1e3;
            let exchange = normal.map_or(delay.mean_ms, |n| n.sample(&mut rng).max(0.0));
            stages.entry("assembly").or_default().push(t.assembly * 1e3);
            stages.entry("trend").or_default().push(t.trend * 1e3);
            stages.entry("decide").or_default().push(t.decide * 1e3);
            stages.entry("pipeline").or_default().push(pipeline);
            stages.entry("end_to_end").or_default().push(pipeline + exchange);

            let frame = engine.assembler.assemble(data, ts).expect("usable tick");
            let model = engine.book.models(crate::engine::Regime::Neutral)[0].clone();
            let ctx = AttentionContext::new(0.0, frame.realized_vol);
            let t0 = Instant::now();
            let p = model.predict(&frame, &ctx)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(p);
            stages.entry("predict").or_default().push(dt);
        }
    }
    Ok(LatencyReport {
        frames: usable.len(),
        repetitions,
        exchange_delay: delay,
        stages: stages
            .into_iter()
            .filter_map(|(k, v)| percentiles(&v).map(|p| (k.to_string(), p)))
            .collect(),
    })
}
