//! Seeded synthetic market with a planted orderbook-imbalance signal.
//!
//! A persistent AR(1) state `z` tilts resting bid sizes up and ask sizes
//! down (or the reverse). Minute log returns are
//! `σ · (√(1 − ρ²) · ε_u + ρ · z_{u − lag})`, so the book leads price by
//! `lag` minutes with coupling `ρ = max_coupling · signal_strength`.
//! Every other series is independent noise.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::*;
use crate::error::{CoreError, Result};
use crate::features::{imbalance, resample_complete, REFERENCE_MINUTE_VOL};
use crate::seed::stage_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub start_ts: Timestamp,
    pub days: usize,
    pub seed: u64,
    pub signal_strength: f64,
    /// Return/state coupling at full strength.
    pub max_coupling: f64,
    pub signal_persistence: f64,
    pub signal_lag_minutes: usize,
    pub minute_vol: f64,
    pub start_price: f64,
    pub book_levels: usize,
    /// Log-size tilt per unit of signal state.
    pub imbalance_sensitivity: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            // 2024-01-01T00:00:00Z
            start_ts: 1_704_067_200_000,
            days: 100,
            seed: 0,
            signal_strength: 0.8,
            max_coupling: 0.5,
            signal_persistence: 0.9,
            signal_lag_minutes: 2,
            minute_vol: REFERENCE_MINUTE_VOL,
            start_price: 30_000.0,
            book_levels: 10,
            imbalance_sensitivity: 0.6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.book_levels == 0 || self.start_ts % DAY_MS != 0 {
            return Err(CoreError::Config(
                "synth needs days >= 1, book_levels >= 1 and a day-aligned start".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.signal_strength) || !(0.0..1.0).contains(&self.max_coupling) {
            return Err(CoreError::Config("signal_strength must be in [0, 1], max_coupling in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.signal_persistence) || !(self.minute_vol > 0.0) || !(self.start_price > 0.0) {
            return Err(CoreError::Config("bad synth persistence, volatility or start price".into()));
        }
        Ok(())
    }

    pub fn coupling(&self) -> f64 {
        self.max_coupling * self.signal_strength
    }
}

fn ar1_series<R: Rng>(rng: &mut R, n: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut z: f64 = StandardNormal.sample(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(z);
        let e: f64 = StandardNormal.sample(rng);
        z = phi * z + innov * e;
    }
    out
}

/// Generates every series in memory.
pub fn generate(cfg: &SynthConfig) -> Result<MarketData> {
    cfg.validate()?;
    let minutes = cfg.days * 1440;
    let lag = cfg.signal_lag_minutes;
    let z = ar1_series(&mut stage_rng(cfg.seed, "synth.signal"), minutes + lag, cfg.signal_persistence);
    let rho = cfg.coupling();
    let noise_w = (1.0 - rho * rho).sqrt();

    let mut ret_rng = stage_rng(cfg.seed, "synth.returns");
    let mut bar_rng = stage_rng(cfg.seed, "synth.bars");
    let mut minute = Vec::with_capacity(minutes);
    let mut close = cfg.start_price;
    for u in 0..minutes {
        let eps: f64 = StandardNormal.sample(&mut ret_rng);
        // z is offset by `lag` so that z[u] is the state `lag` minutes before minute u
        let r = cfg.minute_vol * (noise_w * eps + rho * z[u]);
        let open = close;
        close = open * r.exp();
        let wick = |rng: &mut _| -> f64 {
            let n: f64 = StandardNormal.sample(rng);
            (0.3 * cfg.minute_vol * n.abs()).exp()
        };
        let high = open.max(close) * wick(&mut bar_rng);
        let low = open.min(close) / wick(&mut bar_rng);
        let vn: f64 = StandardNormal.sample(&mut bar_rng);
        minute.push(Bar {
            ts: cfg.start_ts + u as i64 * MINUTE_MS,
            timeframe: Timeframe::Minute,
            open,
            high,
            low,
            close,
            volume: 10.0 * (0.4 * vn).exp(),
        });
    }

    let mut book_rng = stage_rng(cfg.seed, "synth.book");
    let gap = Exp::new(0.5).expect("positive rate");
    let size = Normal::new(0.0, 0.5).expect("positive sd");
    let mut books = Vec::with_capacity(minutes);
    for (u, bar) in minute.iter().enumerate() {
        let mid = bar.close;
        let tilt = cfg.imbalance_sensitivity * z[u + lag];
        let spread_bps = 1.0 + 2.0 * book_rng.random::<f64>();
        let mut side = |sign: f64| -> Vec<Level> {
            let mut px_bps = spread_bps / 2.0;
            let mut levels = Vec::with_capacity(cfg.book_levels);
            for _ in 0..cfg.book_levels {
                let s = 2.0 * (size.sample(&mut book_rng) + sign * tilt).exp();
                levels.push(Level {
                    price: mid * (1.0 - sign * px_bps / 1e4),
                    size: s,
                });
                px_bps += 0.5 + gap.sample(&mut book_rng);
            }
            levels
        };
        let bids = side(1.0);
        let asks = side(-1.0);
        books.push(OrderbookSnapshot { ts: bar.ts, bids, asks });
    }

    let mut sent_rng = stage_rng(cfg.seed, "synth.sentiment");
    let sent_n = minutes / 15;
    let sent_state = ar1_series(&mut sent_rng, sent_n, 0.8);
    let sentiment = sent_state
        .iter()
        .enumerate()
        .map(|(i, s)| SentimentPoint {
            ts: cfg.start_ts + i as i64 * SENTIMENT_INTERVAL_MS,
            score: (0.5 * s).clamp(-1.0, 1.0),
        })
        .collect();

    let hours = minutes / 60;
    let mut chain_rng = stage_rng(cfg.seed, "synth.onchain");
    let onchain = (0..hours)
        .map(|h| {
            let a: f64 = StandardNormal.sample(&mut chain_rng);
            let b: f64 = StandardNormal.sample(&mut chain_rng);
            OnChainMetrics {
                ts: cfg.start_ts + h as i64 * HOUR_MS,
                tx_count: (300_000.0 + 20_000.0 * a).max(1.0),
                tx_volume: 1_000_000.0 * (0.1 * b).exp(),
            }
        })
        .collect();

    let mut ctx_rng = stage_rng(cfg.seed, "synth.context");
    let dom = ar1_series(&mut ctx_rng, hours, 0.99);
    let mut sp = 4_000.0f64;
    let context = dom
        .iter()
        .enumerate()
        .map(|(h, d)| {
            let n: f64 = StandardNormal.sample(&mut ctx_rng);
            sp *= (0.001 * n).exp();
            MarketContext {
                ts: cfg.start_ts + h as i64 * HOUR_MS,
                sp500: sp,
                btc_dominance: (0.5 + 0.03 * d).clamp(0.01, 0.99),
            }
        })
        .collect();

    let hour = resample_complete(&minute, Timeframe::Hour)?;
    let day = resample_complete(&minute, Timeframe::Day)?;
    Ok(MarketData {
        minute,
        hour,
        day,
        books,
        sentiment,
        onchain,
        context,
    })
}

/// Generates the dataset and writes the five series files into `dir`.
pub fn write_synth(cfg: &SynthConfig, dir: &std::path::Path) -> Result<(MarketData, DataPaths)> {
    let data = generate(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let paths = data.write(dir)?;
    Ok((data, paths))
}

/// Pearson correlation between each minute's book imbalance and the log
/// return over the following `horizon` minutes.
pub fn imbalance_return_correlation(data: &MarketData, horizon: usize) -> Option<f64> {
    let closes: std::collections::HashMap<Timestamp, f64> = data.minute.iter().map(|b| (b.ts, b.close)).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for book in &data.books {
        let (Some(c0), Some(c1)) = (
            closes.get(&book.ts),
            closes.get(&(book.ts + horizon as i64 * MINUTE_MS)),
        ) else {
            continue;
        };
        xs.push(imbalance(book));
        ys.push((c1 / c0).ln());
    }
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}
