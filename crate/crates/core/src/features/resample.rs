use serde::{Deserialize, Serialize};

use crate::data::{Bar, Timeframe};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResampleMode {
    /// Buckets with any missing constituent are dropped.
    Strict,
    /// Incomplete buckets are emitted and flagged.
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resampled {
    pub bar: Bar,
    pub complete: bool,
}

/// Aggregates time-ordered bars into `target` buckets: first open, max high,
/// min low, last close, summed volume.
pub fn resample(bars: &[Bar], target: Timeframe, mode: ResampleMode) -> Result<Vec<Resampled>> {
    let Some(first) = bars.first() else {
        return Ok(Vec::new());
    };
    let source = first.timeframe;
    if source.interval_ms() >= target.interval_ms() {
        return Err(CoreError::Invalid(format!(
            "cannot resample {} bars to {}",
            source.as_str(),
            target.as_str()
        )));
    }
    if let Some(b) = bars.iter().find(|b| b.timeframe != source) {
        return Err(CoreError::Invalid(format!(
            "mixed timeframes: {} bar at {} in {} series",
            b.timeframe.as_str(),
            b.ts,
            source.as_str()
        )));
    }
    let per_bucket = (target.interval_ms() / source.interval_ms()) as usize;

    let mut out = Vec::new();
    let mut i = 0;
    while i < bars.len() {
        let bucket = target.floor(bars[i].ts);
        let mut acc = Bar {
            ts: bucket,
            timeframe: target,
            ..bars[i]
        };
        let mut count = 0;
        while i < bars.len() && target.floor(bars[i].ts) == bucket {
            let b = &bars[i];
            if count > 0 {
                acc.high = acc.high.max(b.high);
                acc.low = acc.low.min(b.low);
                acc.close = b.close;
                acc.volume += b.volume;
            }
            count += 1;
            i += 1;
        }
        let complete = count == per_bucket;
        if complete || mode == ResampleMode::Lenient {
            out.push(Resampled { bar: acc, complete });
        }
    }
    Ok(out)
}

/// Strict resampling, returning bars only.
pub fn resample_complete(bars: &[Bar], target: Timeframe) -> Result<Vec<Bar>> {
    Ok(resample(bars, target, ResampleMode::Strict)?
        .into_iter()
        .map(|r| r.bar)
        .collect())
}
