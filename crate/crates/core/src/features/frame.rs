//! Per-instant model inputs: one channel × time tensor per timeframe head,
//! an orderbook statistics vector and the recent sentiment window.

use std::fmt;

use ptnn::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::book::{orderbook_stats, BookWindow};
use super::indicators::{bar_channels, realized_vol, BAR_CHANNELS, BAR_WARMUP};
use crate::data::*;
use crate::error::{CoreError, Result};

/// Per-minute volatility the built-in normalization is scaled for.
pub const REFERENCE_MINUTE_VOL: f64 = 0.008;

pub const SENTIMENT_WINDOW: usize = 10;

/// Shape and freshness parameters of frame assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub lookback_minute: usize,
    pub lookback_hour: usize,
    pub lookback_day: usize,
    /// Levels per side copied into the orderbook vector.
    pub book_levels: usize,
    pub book_interval_ms: i64,
    pub onchain_max_age_ms: i64,
    pub context_max_age_ms: i64,
    /// Minutes of returns behind the realized-volatility context input.
    pub vol_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            lookback_minute: 60,
            lookback_hour: 48,
            lookback_day: 30,
            book_levels: 5,
            book_interval_ms: MINUTE_MS,
            onchain_max_age_ms: 2 * HOUR_MS,
            context_max_age_ms: 2 * HOUR_MS,
            vol_window: 60,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lookback_minute == 0 || self.lookback_hour == 0 || self.lookback_day == 0 {
            return Err(CoreError::Config("lookbacks must be >= 1".into()));
        }
        if self.book_levels == 0 || self.book_interval_ms <= 0 || HOUR_MS % self.book_interval_ms != 0 {
            return Err(CoreError::Config(
                "book_levels must be >= 1 and the book interval must divide one hour".into(),
            ));
        }
        if self.vol_window + 1 > self.lookback_minute + BAR_WARMUP {
            return Err(CoreError::Config("vol_window exceeds the minute history window".into()));
        }
        Ok(())
    }

    pub fn lookback(&self, tf: Timeframe) -> usize {
        match tf {
            Timeframe::Minute => self.lookback_minute,
            Timeframe::Hour => self.lookback_hour,
            Timeframe::Day => self.lookback_day,
        }
    }

    /// Bars of `tf` a frame depends on (lookback plus indicator warm-up).
    pub fn history_bars(&self, tf: Timeframe) -> usize {
        self.lookback(tf) + BAR_WARMUP
    }

    pub fn channels(&self, tf: Timeframe) -> Vec<String> {
        let mut out: Vec<String> = BAR_CHANNELS.iter().map(|c| format!("{}.{c}", tf.as_str())).collect();
        out.push("onchain.tx_count".into());
        out.push("onchain.tx_volume".into());
        if tf != Timeframe::Minute {
            out.push("context.sp500".into());
            out.push("context.btc_dominance".into());
        }
        out
    }

    pub fn orderbook_fields(&self) -> Vec<String> {
        let mut out: Vec<String> = ["minute", "hour"]
            .iter()
            .flat_map(|w| ["biggest", "max_gap", "imbalance"].map(|f| format!("{f}_{w}")))
            .collect();
        out.push("spread".into());
        out.extend((0..self.book_levels).map(|i| format!("bid_size_{i}")));
        out.extend((0..self.book_levels).map(|i| format!("ask_size_{i}")));
        out
    }

    pub fn orderbook_width(&self) -> usize {
        7 + 2 * self.book_levels
    }

    /// Normalization keys that assembly will look up.
    pub fn required_features(&self) -> Vec<String> {
        let mut out: Vec<String> = Timeframe::ALL.iter().flat_map(|tf| self.channels(*tf)).collect();
        out.extend(
            [
                "book.biggest",
                "book.max_gap",
                "book.imbalance",
                "book.spread",
                "book.level_size",
                "sentiment.score",
                "regime.vol60",
            ]
            .map(String::from),
        );
        out.sort();
        out.dedup();
        out
    }

    /// Stable fingerprint of everything that determines frame shapes and channel meaning.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        for tf in Timeframe::ALL {
            h.update(format!("{}:{}:{:?};", tf.as_str(), self.lookback(tf), self.channels(tf)));
        }
        h.update(format!("book:{:?};sent:{SENTIMENT_WINDOW};", self.orderbook_fields()));
        hex::encode(&h.finalize()[..8])
    }
}

/// Built-in normalization, scaled for [`REFERENCE_MINUTE_VOL`] and the
/// synthetic generator's default levels.
pub fn default_normalization() -> NormalizationSpec {
    let s = REFERENCE_MINUTE_VOL;
    let mut spec = NormalizationSpec::new();
    let mut set = |k: &str, c: f64, sc: f64| spec.set(k, c, sc).expect("positive scale");
    for (tf, minutes, vol_c, vol_s) in [
        ("minute", 1.0f64, 10.0, 5.0),
        ("hour", 60.0, 600.0, 150.0),
        ("day", 1440.0, 14_400.0, 1_500.0),
    ] {
        let step = s * minutes.sqrt();
        set(&format!("{tf}.ret"), 0.0, step);
        set(&format!("{tf}.volume"), vol_c, vol_s);
        set(&format!("{tf}.sma5"), 0.0, 1.2 * step);
        set(&format!("{tf}.sma20"), 0.0, 2.5 * step);
        set(&format!("{tf}.range"), 1.6 * step, step);
    }
    set("onchain.tx_count", 300_000.0, 50_000.0);
    set("onchain.tx_volume", 1_000_000.0, 200_000.0);
    set("context.sp500", 4_000.0, 400.0);
    set("context.btc_dominance", 0.5, 0.1);
    set("sentiment.score", 0.0, 1.0);
    set("book.biggest", 8.0, 4.0);
    set("book.max_gap", 10.0, 10.0);
    set("book.imbalance", 0.0, 0.4);
    set("book.spread", 2.0, 1.0);
    set("book.level_size", 2.0, 1.5);
    set("regime.vol60", s, 0.5 * s);
    let day = s * 1440f64.sqrt();
    set("trend.ma_daily", 0.0, 0.6 * day);
    set("trend.ma_weekly", 0.0, 1.5 * day);
    set("trend.ma_monthly", 0.0, 3.0 * day);
    spec
}

/// Why a frame could not be built at a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnavailableReason {
    /// A record is missing inside the history window.
    Gap,
    /// The series does not reach back far enough yet.
    InsufficientHistory,
    /// The latest slow-moving record is too old.
    Stale,
    /// The latest orderbook has fewer levels than configured.
    Depth,
    /// A computed value is not finite.
    NonFinite,
}

impl UnavailableReason {
    pub fn as_str(self) -> &'static str {
        match self {
            UnavailableReason::Gap => "gap",
            UnavailableReason::InsufficientHistory => "insufficient_history",
            UnavailableReason::Stale => "stale",
            UnavailableReason::Depth => "depth",
            UnavailableReason::NonFinite => "non_finite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameUnavailable {
    pub reason: UnavailableReason,
    pub source: &'static str,
    pub detail: String,
}

impl fmt::Display for FrameUnavailable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.reason.as_str(), self.source, self.detail)
    }
}

impl FrameUnavailable {
    pub fn new(reason: UnavailableReason, source: &'static str, detail: impl Into<String>) -> Self {
        Self {
            reason,
            source,
            detail: detail.into(),
        }
    }
}

fn unavailable(reason: UnavailableReason, source: &'static str, detail: impl Into<String>) -> FrameUnavailable {
    FrameUnavailable::new(reason, source, detail)
}

/// Fully populated, normalized model input for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub ts: Timestamp,
    pub minute: Tensor,
    pub hour: Tensor,
    pub day: Tensor,
    pub orderbook: Vec<f64>,
    pub sentiment: Vec<f64>,
    /// Normalized realized minute volatility (attention context input).
    pub realized_vol: f64,
    /// Latest minute close (raw, for execution).
    pub close: f64,
}

impl FeatureFrame {
    /// All-zero frame with the shapes implied by `cfg`.
    pub fn zeros(ts: Timestamp, cfg: &FeatureConfig) -> Self {
        let head = |tf| Tensor::zeros(vec![cfg.channels(tf).len(), cfg.lookback(tf)]);
        Self {
            ts,
            minute: head(Timeframe::Minute),
            hour: head(Timeframe::Hour),
            day: head(Timeframe::Day),
            orderbook: vec![0.0; cfg.orderbook_width()],
            sentiment: vec![0.0; SENTIMENT_WINDOW],
            realized_vol: 0.0,
            close: 1.0,
        }
    }

    pub fn head(&self, tf: Timeframe) -> &Tensor {
        match tf {
            Timeframe::Minute => &self.minute,
            Timeframe::Hour => &self.hour,
            Timeframe::Day => &self.day,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.minute.all_finite()
            && self.hour.all_finite()
            && self.day.all_finite()
            && self.orderbook.iter().all(|v| v.is_finite())
            && self.sentiment.iter().all(|v| v.is_finite())
            && self.realized_vol.is_finite()
    }

    /// Named-channel JSON record (one line of `features.jsonl`).
    pub fn to_named_json(&self, cfg: &FeatureConfig) -> serde_json::Value {
        let mut heads = serde_json::Map::new();
        for tf in Timeframe::ALL {
            let t = self.head(tf);
            let len = t.shape()[1];
            let mut chans = serde_json::Map::new();
            for (c, name) in cfg.channels(tf).iter().enumerate() {
                chans.insert(name.clone(), serde_json::json!(&t.values()[c * len..(c + 1) * len]));
            }
            heads.insert(tf.as_str().to_string(), serde_json::Value::Object(chans));
        }
        let book: serde_json::Map<String, serde_json::Value> = cfg
            .orderbook_fields()
            .into_iter()
            .zip(self.orderbook.iter())
            .map(|(k, v)| (k, serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "ts": self.ts,
            "heads": heads,
            "orderbook": book,
            "sentiment": self.sentiment,
            "realized_vol": self.realized_vol,
        })
    }
}

/// Frame builder with normalization entries resolved up front, so that a
/// missing entry is a configuration error rather than a per-tick failure.
#[derive(Debug, Clone)]
pub struct FrameAssembler {
    cfg: FeatureConfig,
    spec: NormalizationSpec,
}

impl FrameAssembler {
    pub fn new(cfg: FeatureConfig, spec: NormalizationSpec) -> Result<Self> {
        cfg.validate()?;
        let missing: Vec<String> = cfg
            .required_features()
            .into_iter()
            .filter(|f| !spec.contains(f))
            .collect();
        if !missing.is_empty() {
            return Err(CoreError::Config(format!("normalization spec lacks {missing:?}")));
        }
        Ok(Self { cfg, spec })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &NormalizationSpec {
        &self.spec
    }

    fn norm(&self, feature: &str, raw: f64) -> f64 {
        self.spec.normalize(feature, raw).expect("checked in FrameAssembler::new")
    }

    /// Contiguous history window of `tf` bars ending at the last bar complete at `ts`.
    fn bar_window<'a>(&self, data: &'a MarketData, tf: Timeframe, ts: Timestamp) -> std::result::Result<&'a [Bar], FrameUnavailable> {
        let need = self.cfg.history_bars(tf);
        let interval = tf.interval_ms();
        let last_expected = tf.floor(ts + MINUTE_MS) - interval;
        let first_expected = last_expected - (need as i64 - 1) * interval;
        let bars = data.bars(tf);
        let lo = bars.partition_point(|b| b.ts < first_expected);
        let hi = bars.partition_point(|b| b.ts <= last_expected);
        let window = &bars[lo..hi];
        if window.len() == need {
            return Ok(window);
        }
        let source = tf.as_str();
        match bars.first() {
            Some(first) if first.ts <= first_expected => Err(unavailable(
                UnavailableReason::Gap,
                source,
                format!("{} of {need} bars in [{first_expected}, {last_expected}]", window.len()),
            )),
            _ => Err(unavailable(
                UnavailableReason::InsufficientHistory,
                source,
                format!("history starts after {first_expected}"),
            )),
        }
    }

    fn head_tensor(&self, tf: Timeframe, bars: &[Bar], onchain: &OnChainMetrics, ctx: &MarketContext) -> Tensor {
        let lookback = self.cfg.lookback(tf);
        let names = self.cfg.channels(tf);
        let raw = bar_channels(bars, lookback);
        let mut values = Vec::with_capacity(names.len() * lookback);
        for (c, series) in raw.iter().enumerate() {
            values.extend(series.iter().map(|v| self.norm(&names[c], *v)));
        }
        let mut constant = |name: &str, v: f64| {
            let n = self.norm(name, v);
            values.extend(std::iter::repeat_n(n, lookback));
        };
        constant("onchain.tx_count", onchain.tx_count);
        constant("onchain.tx_volume", onchain.tx_volume);
        if tf != Timeframe::Minute {
            constant("context.sp500", ctx.sp500);
            constant("context.btc_dominance", ctx.btc_dominance);
        }
        Tensor::new(vec![names.len(), lookback], values).expect("channel-major layout")
    }

    fn book_window<'a>(&self, data: &'a MarketData, ts: Timestamp) -> std::result::Result<&'a [OrderbookSnapshot], FrameUnavailable> {
        let need = (HOUR_MS / self.cfg.book_interval_ms) as usize;
        let books = data.books_asof(ts);
        let lo = books.partition_point(|b| b.ts <= ts - HOUR_MS);
        let window = &books[lo..];
        let latest_ok = window.last().is_some_and(|b| b.ts > ts - self.cfg.book_interval_ms);
        if window.len() >= need && latest_ok {
            return Ok(window);
        }
        match data.books.first() {
            Some(first) if first.ts <= ts - HOUR_MS + self.cfg.book_interval_ms => Err(unavailable(
                UnavailableReason::Gap,
                "book",
                format!("{} of {need} snapshots in the last hour", window.len()),
            )),
            _ => Err(unavailable(UnavailableReason::InsufficientHistory, "book", "less than one hour of snapshots")),
        }
    }

    /// Builds the frame for tick `ts` using only records observable at `ts`.
    pub fn assemble(&self, data: &MarketData, ts: Timestamp) -> std::result::Result<FeatureFrame, FrameUnavailable> {
        let minute = self.bar_window(data, Timeframe::Minute, ts)?;
        let hour = self.bar_window(data, Timeframe::Hour, ts)?;
        let day = self.bar_window(data, Timeframe::Day, ts)?;
        let books = self.book_window(data, ts)?;

        let sentiment = data.sentiment_asof(ts);
        if sentiment.len() < SENTIMENT_WINDOW {
            return Err(unavailable(
                UnavailableReason::InsufficientHistory,
                "sentiment",
                format!("{} of {SENTIMENT_WINDOW} points", sentiment.len()),
            ));
        }
        let sentiment = &sentiment[sentiment.len() - SENTIMENT_WINDOW..];
        let latest = sentiment.last().expect("non-empty");
        if ts - latest.ts >= SENTIMENT_INTERVAL_MS
            || sentiment.windows(2).any(|w| w[1].ts - w[0].ts != SENTIMENT_INTERVAL_MS)
        {
            return Err(unavailable(UnavailableReason::Gap, "sentiment", "missing 15-minute point"));
        }

        let onchain = data
            .onchain_asof(ts)
            .ok_or_else(|| unavailable(UnavailableReason::InsufficientHistory, "onchain", "no record yet"))?;
        if ts - onchain.ts > self.cfg.onchain_max_age_ms {
            return Err(unavailable(UnavailableReason::Stale, "onchain", format!("record from {}", onchain.ts)));
        }
        let ctx = data
            .context_asof(ts)
            .ok_or_else(|| unavailable(UnavailableReason::InsufficientHistory, "context", "no record yet"))?;
        if ts - ctx.ts > self.cfg.context_max_age_ms {
            return Err(unavailable(UnavailableReason::Stale, "context", format!("record from {}", ctx.ts)));
        }

        let latest_book = books.last().expect("non-empty window");
        let levels = self.cfg.book_levels;
        if latest_book.bids.len() < levels || latest_book.asks.len() < levels {
            return Err(unavailable(
                UnavailableReason::Depth,
                "book",
                format!("latest snapshot has fewer than {levels} levels per side"),
            ));
        }
        let minute_books = {
            let lo = books.partition_point(|b| b.ts <= ts - MINUTE_MS);
            &books[lo..]
        };
        let st_m = orderbook_stats(minute_books, BookWindow::Minute).expect("latest is inside the minute window");
        let st_h = orderbook_stats(books, BookWindow::Hour).expect("non-empty window");
        let mid = latest_book.mid().expect("validated book");
        let bps = |v: f64| v / mid * 1e4;
        let mut orderbook = Vec::with_capacity(self.cfg.orderbook_width());
        for st in [st_m, st_h] {
            orderbook.push(self.norm("book.biggest", st.biggest_order_size));
            orderbook.push(self.norm("book.max_gap", bps(st.max_gap)));
            orderbook.push(self.norm("book.imbalance", st.bid_ask_imbalance));
        }
        orderbook.push(self.norm(
            "book.spread",
            bps(latest_book.best_ask().expect("validated") - latest_book.best_bid().expect("validated")),
        ));
        for side in [&latest_book.bids, &latest_book.asks] {
            orderbook.extend(side[..levels].iter().map(|l| self.norm("book.level_size", l.size)));
        }

        let closes: Vec<f64> = minute.iter().map(|b| b.close).collect();
        let vol = realized_vol(&closes, self.cfg.vol_window).expect("window checked in config");

        let frame = FeatureFrame {
            ts,
            minute: self.head_tensor(Timeframe::Minute, minute, onchain, ctx),
            hour: self.head_tensor(Timeframe::Hour, hour, onchain, ctx),
            day: self.head_tensor(Timeframe::Day, day, onchain, ctx),
            orderbook,
            sentiment: sentiment.iter().map(|p| self.norm("sentiment.score", p.score)).collect(),
            realized_vol: self.norm("regime.vol60", vol),
            close: minute.last().expect("non-empty").close,
        };
        if !frame.all_finite() {
            return Err(unavailable(UnavailableReason::NonFinite, "frame", "non-finite feature value"));
        }
        Ok(frame)
    }
}

/// Free-function form of [`FrameAssembler::assemble`].
pub fn assemble_frame(
    ts: Timestamp,
    data: &MarketData,
    assembler: &FrameAssembler,
) -> std::result::Result<FeatureFrame, FrameUnavailable> {
    assembler.assemble(data, ts)
}
