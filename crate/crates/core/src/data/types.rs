use serde::{Deserialize, Serialize};

/// UTC epoch milliseconds.
pub type Timestamp = i64;

pub const MINUTE_MS: i64 = 60_000;
pub const HOUR_MS: i64 = 60 * MINUTE_MS;
pub const DAY_MS: i64 = 24 * HOUR_MS;
pub const SENTIMENT_INTERVAL_MS: i64 = 15 * MINUTE_MS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timeframe {
    Minute,
    Hour,
    Day,
}

impl Timeframe {
    pub const ALL: [Timeframe; 3] = [Timeframe::Minute, Timeframe::Hour, Timeframe::Day];

    pub fn interval_ms(self) -> i64 {
        match self {
            Timeframe::Minute => MINUTE_MS,
            Timeframe::Hour => HOUR_MS,
            Timeframe::Day => DAY_MS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Timeframe::Minute => "minute",
            Timeframe::Hour => "hour",
            Timeframe::Day => "day",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "minute" | "1m" => Some(Timeframe::Minute),
            "hour" | "1h" => Some(Timeframe::Hour),
            "day" | "1d" => Some(Timeframe::Day),
            _ => None,
        }
    }

    /// Start of the bucket containing `ts`.
    pub fn floor(self, ts: Timestamp) -> Timestamp {
        ts.div_euclid(self.interval_ms()) * self.interval_ms()
    }
}

/// One OHLCV bucket covering `[ts, ts + interval)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub ts: Timestamp,
    pub timeframe: Timeframe,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    /// Minute tick at which the bar is complete and observable: the start of
    /// its last constituent minute.
    pub fn available_at(&self) -> Timestamp {
        self.ts + self.timeframe.interval_ms() - MINUTE_MS
    }

    /// Returns the offending field and a message when an invariant fails.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err((name, format!("price must be positive and finite, got {v}")));
            }
        }
        if self.low > self.open || self.low > self.close {
            return Err(("low", format!("low {} above open/close", self.low)));
        }
        if self.high < self.open || self.high < self.close {
            return Err(("high", format!("high {} below open/close", self.high)));
        }
        if !(self.volume.is_finite() && self.volume >= 0.0) {
            return Err(("volume", format!("volume must be >= 0, got {}", self.volume)));
        }
        if self.ts.rem_euclid(self.timeframe.interval_ms()) != 0 {
            return Err((
                "ts",
                format!("{} not aligned to {} boundary", self.ts, self.timeframe.as_str()),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub price: f64,
    pub size: f64,
}

/// Top-of-book depth: bids price-descending, asks price-ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderbookSnapshot {
    pub ts: Timestamp,
    pub bids: Vec<Level>,
    pub asks: Vec<Level>,
}

impl OrderbookSnapshot {
    pub fn best_bid(&self) -> Option<f64> {
        self.bids.first().map(|l| l.price)
    }

    pub fn best_ask(&self) -> Option<f64> {
        self.asks.first().map(|l| l.price)
    }

    pub fn mid(&self) -> Option<f64> {
        Some(0.5 * (self.best_bid()? + self.best_ask()?))
    }

    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if self.bids.is_empty() || self.asks.is_empty() {
            return Err(("bids/asks", "both sides need at least one level".into()));
        }
        for (side, levels) in [("bids", &self.bids), ("asks", &self.asks)] {
            for l in levels {
                if !(l.price.is_finite() && l.price > 0.0) {
                    return Err((side, format!("bad price {}", l.price)));
                }
                if !(l.size.is_finite() && l.size > 0.0) {
                    return Err((side, format!("size must be > 0, got {}", l.size)));
                }
            }
        }
        if self.bids.windows(2).any(|w| w[1].price >= w[0].price) {
            return Err(("bids", "prices must be strictly descending".into()));
        }
        if self.asks.windows(2).any(|w| w[1].price <= w[0].price) {
            return Err(("asks", "prices must be strictly ascending".into()));
        }
        if self.bids[0].price >= self.asks[0].price {
            return Err((
                "bids",
                format!("best bid {} not below best ask {}", self.bids[0].price, self.asks[0].price),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentPoint {
    pub ts: Timestamp,
    pub score: f64,
}

impl SentimentPoint {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !self.score.is_finite() {
            return Err(("score", "must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnChainMetrics {
    pub ts: Timestamp,
    pub tx_count: f64,
    pub tx_volume: f64,
}

impl OnChainMetrics {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.tx_count.is_finite() && self.tx_count >= 0.0) {
            return Err(("tx_count", format!("must be >= 0, got {}", self.tx_count)));
        }
        if !(self.tx_volume.is_finite() && self.tx_volume >= 0.0) {
            return Err(("tx_volume", format!("must be >= 0, got {}", self.tx_volume)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketContext {
    pub ts: Timestamp,
    pub sp500: f64,
    pub btc_dominance: f64,
}

impl MarketContext {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.sp500.is_finite() && self.sp500 > 0.0) {
            return Err(("sp500", format!("must be > 0, got {}", self.sp500)));
        }
        if !(0.0..=1.0).contains(&self.btc_dominance) {
            return Err(("btc_dominance", format!("must be in [0, 1], got {}", self.btc_dominance)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bar(ts: i64, o: f64, h: f64, l: f64, c: f64) -> Bar {
        Bar {
            ts,
            timeframe: Timeframe::Minute,
            open: o,
            high: h,
            low: l,
            close: c,
            volume: 1.0,
        }
    }

    #[test]
    fn bar_invariants() {
        assert!(bar(0, 10.0, 11.0, 9.0, 10.5).check().is_ok());
        assert_eq!(bar(0, 10.0, 9.0, 11.0, 10.0).check().unwrap_err().0, "low");
        assert_eq!(bar(1, 10.0, 11.0, 9.0, 10.0).check().unwrap_err().0, "ts");
    }

    #[test]
    fn hour_bar_available_at_last_minute() {
        let b = Bar {
            timeframe: Timeframe::Hour,
            ..bar(HOUR_MS, 1.0, 1.0, 1.0, 1.0)
        };
        assert_eq!(b.available_at(), 2 * HOUR_MS - MINUTE_MS);
    }

    #[test]
    fn book_ordering() {
        let l = |p, s| Level { price: p, size: s };
        let good = OrderbookSnapshot {
            ts: 0,
            bids: vec![l(100.0, 1.0), l(99.0, 2.0)],
            asks: vec![l(101.0, 1.0), l(102.0, 1.0)],
        };
        assert!(good.check().is_ok());
        let crossed = OrderbookSnapshot {
            asks: vec![l(100.0, 1.0)],
            ..good.clone()
        };
        assert!(crossed.check().is_err());
        let unsorted = OrderbookSnapshot {
            bids: vec![l(99.0, 1.0), l(100.0, 2.0)],
            ..good
        };
        assert!(unsorted.check().is_err());
    }
}
