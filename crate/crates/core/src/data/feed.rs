//! Sequential market-data sources: exact replay of loaded series, and a
//! simulated live feed that drops and delays payloads.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::market::MarketData;
use super::types::*;
use crate::error::{CoreError, Result};
use crate::seed::{stage_rng, StageRng};

/// Everything that became observable at `ts`. `received_at` is when the
/// consumer actually gets it (equal to `ts` for replay).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedFrame {
    pub ts: Timestamp,
    pub received_at: Timestamp,
    pub bar: Option<Bar>,
    pub book: Option<OrderbookSnapshot>,
    pub sentiment: Option<SentimentPoint>,
    pub onchain: Option<OnChainMetrics>,
    pub context: Option<MarketContext>,
}

impl FeedFrame {
    fn empty(ts: Timestamp) -> Self {
        Self {
            ts,
            received_at: ts,
            bar: None,
            book: None,
            sentiment: None,
            onchain: None,
            context: None,
        }
    }

    pub fn has_payload(&self) -> bool {
        self.bar.is_some()
            || self.book.is_some()
            || self.sentiment.is_some()
            || self.onchain.is_some()
            || self.context.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Bar,
    Book,
    Sentiment,
    OnChain,
    Context,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 5] = [
        PayloadKind::Bar,
        PayloadKind::Book,
        PayloadKind::Sentiment,
        PayloadKind::OnChain,
        PayloadKind::Context,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Bar => "bars",
            PayloadKind::Book => "book",
            PayloadKind::Sentiment => "sentiment",
            PayloadKind::OnChain => "onchain",
            PayloadKind::Context => "context",
        }
    }
}

/// A single-consumer, time-ordered source of frames.
pub trait Feed {
    /// `Ok(None)` is end-of-feed; `Err` is a feed failure.
    fn next_frame(&mut self) -> Result<Option<FeedFrame>>;
}

/// Builds replay frames in availability order. Payloads sharing a tick are
/// packed into one frame; a second bar at the same tick (an hour or day bar
/// completing alongside its last minute) starts a new frame with the same `ts`.
pub fn replay_frames(data: &MarketData) -> Vec<FeedFrame> {
    let mut events: Vec<(Timestamp, u8, usize)> = Vec::new();
    for (order, tf) in Timeframe::ALL.iter().enumerate() {
        for (i, b) in data.bars(*tf).iter().enumerate() {
            events.push((b.available_at(), order as u8, i));
        }
    }
    events.extend(data.books.iter().enumerate().map(|(i, b)| (b.ts, 3, i)));
    events.extend(data.sentiment.iter().enumerate().map(|(i, p)| (p.ts, 4, i)));
    events.extend(data.onchain.iter().enumerate().map(|(i, p)| (p.ts, 5, i)));
    events.extend(data.context.iter().enumerate().map(|(i, p)| (p.ts, 6, i)));
    events.sort_unstable();

    let mut frames: Vec<FeedFrame> = Vec::new();
    let mut current: Option<FeedFrame> = None;
    for (ts, kind, i) in events {
        let fresh = match &current {
            Some(f) => f.ts != ts || (kind <= 2 && f.bar.is_some()),
            None => true,
        };
        if fresh {
            frames.extend(current.take());
        }
        let frame = current.get_or_insert_with(|| FeedFrame::empty(ts));
        match kind {
            0..=2 => frame.bar = Some(data.bars(Timeframe::ALL[kind as usize])[i]),
            3 => frame.book = Some(data.books[i].clone()),
            4 => frame.sentiment = Some(data.sentiment[i]),
            5 => frame.onchain = Some(data.onchain[i]),
            _ => frame.context = Some(data.context[i]),
        }
    }
    frames.extend(current);
    frames
}

/// Exact replay of pre-built frames.
#[derive(Debug, Clone)]
pub struct ReplayFeed {
    frames: Vec<FeedFrame>,
    pos: usize,
}

impl ReplayFeed {
    pub fn new(data: &MarketData) -> Self {
        Self::from_frames(replay_frames(data))
    }

    pub fn from_frames(frames: Vec<FeedFrame>) -> Self {
        Self { frames, pos: 0 }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

impl Feed for ReplayFeed {
    fn next_frame(&mut self) -> Result<Option<FeedFrame>> {
        let f = self.frames.get(self.pos).cloned();
        if f.is_some() {
            self.pos += 1;
        }
        Ok(f)
    }
}

/// Fault injection applied by [`SimulatedLiveFeed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    /// Probability of dropping each payload.
    pub drop_prob: f64,
    /// Per-kind overrides of `drop_prob`, indexed like [`PayloadKind::ALL`].
    pub drop_prob_by_kind: [Option<f64>; 5],
    pub lag_ms_mean: f64,
    pub lag_ms_std: f64,
    pub seed: u64,
    /// Simulated disconnect: the feed errors after this many delivered frames.
    pub fail_after: Option<usize>,
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            drop_prob: 0.0,
            drop_prob_by_kind: [None; 5],
            lag_ms_mean: 0.0,
            lag_ms_std: 0.0,
            seed: 0,
            fail_after: None,
        }
    }
}

impl FaultConfig {
    pub fn drop_prob_for(&self, kind: PayloadKind) -> f64 {
        let idx = PayloadKind::ALL.iter().position(|k| *k == kind).expect("known kind");
        self.drop_prob_by_kind[idx].unwrap_or(self.drop_prob)
    }

    pub fn validate(&self) -> Result<()> {
        let probs = std::iter::once(self.drop_prob).chain(self.drop_prob_by_kind.iter().flatten().copied());
        for p in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(CoreError::Config(format!("drop probability {p} outside [0, 1]")));
            }
        }
        if !(self.lag_ms_mean >= 0.0 && self.lag_ms_std >= 0.0) {
            return Err(CoreError::Config("lag mean and std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn is_noop(&self) -> bool {
        self.drop_prob == 0.0
            && self.drop_prob_by_kind.iter().all(|p| p.unwrap_or(0.0) == 0.0)
            && self.lag_ms_mean == 0.0
            && self.lag_ms_std == 0.0
            && self.fail_after.is_none()
    }
}

/// Replay with seeded payload drops and delivery lag. Dropped payloads are
/// real absences: nothing marks them, the consumer has to notice.
#[derive(Debug, Clone)]
pub struct SimulatedLiveFeed {
    inner: ReplayFeed,
    cfg: FaultConfig,
    rng: StageRng,
    lag: Option<Normal<f64>>,
    last_received: Timestamp,
    delivered: usize,
}

impl SimulatedLiveFeed {
    pub fn new(inner: ReplayFeed, cfg: FaultConfig) -> Result<Self> {
        cfg.validate()?;
        let lag = if cfg.lag_ms_mean > 0.0 || cfg.lag_ms_std > 0.0 {
            Some(Normal::new(cfg.lag_ms_mean, cfg.lag_ms_std).map_err(|e| CoreError::Config(e.to_string()))?)
        } else {
            None
        };
        Ok(Self {
            inner,
            rng: stage_rng(cfg.seed, "feed"),
            cfg,
            lag,
            last_received: i64::MIN,
            delivered: 0,
        })
    }

    fn keep(&mut self, kind: PayloadKind) -> bool {
        let p = self.cfg.drop_prob_for(kind);
        // one draw per payload regardless of p keeps the pattern stable across configs
        let u: f64 = self.rng.random();
        u >= p
    }
}

impl Feed for SimulatedLiveFeed {
    fn next_frame(&mut self) -> Result<Option<FeedFrame>> {
        loop {
            if let Some(limit) = self.cfg.fail_after {
                if self.delivered >= limit {
                    return Err(CoreError::Feed(format!("connection lost after {limit} frames")));
                }
            }
            let Some(mut f) = self.inner.next_frame()? else {
                return Ok(None);
            };
            if f.bar.is_some() && !self.keep(PayloadKind::Bar) {
                f.bar = None;
            }
            if f.book.is_some() && !self.keep(PayloadKind::Book) {
                f.book = None;
            }
            if f.sentiment.is_some() && !self.keep(PayloadKind::Sentiment) {
                f.sentiment = None;
            }
            if f.onchain.is_some() && !self.keep(PayloadKind::OnChain) {
                f.onchain = None;
            }
            if f.context.is_some() && !self.keep(PayloadKind::Context) {
                f.context = None;
            }
            let lag = match &self.lag {
                Some(d) => d.sample(&mut self.rng).max(0.0).round() as i64,
                None => 0,
            };
            if !f.has_payload() {
                continue;
            }
            f.received_at = (f.ts + lag).max(self.last_received);
            self.last_received = f.received_at;
            self.delivered += 1;
            return Ok(Some(f));
        }
    }
}

/// Drains a feed into a vector (test and tooling helper).
pub fn collect_frames(feed: &mut dyn Feed) -> Result<Vec<FeedFrame>> {
    let mut out = Vec::new();
    while let Some(f) = feed.next_frame()? {
        out.push(f);
    }
    Ok(out)
}
