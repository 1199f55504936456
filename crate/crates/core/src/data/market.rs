use std::path::Path;

use super::feed::FeedFrame;
use super::io::{self, DataPaths};
use super::types::*;
use crate::error::{CoreError, Result};

/// All loaded (or ingested-so-far) series for one instrument.
///
/// Each vector is strictly time-ordered. Queries "as of" a tick only look at
/// records that were observable at that tick, so the same structure serves
/// offline dataset building and incremental replay.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarketData {
    pub minute: Vec<Bar>,
    pub hour: Vec<Bar>,
    pub day: Vec<Bar>,
    pub books: Vec<OrderbookSnapshot>,
    pub sentiment: Vec<SentimentPoint>,
    pub onchain: Vec<OnChainMetrics>,
    pub context: Vec<MarketContext>,
}

impl MarketData {
    pub fn from_bars(bars: Vec<Bar>) -> Self {
        let mut out = Self::default();
        for b in bars {
            out.bars_mut(b.timeframe).push(b);
        }
        out
    }

    pub fn load(paths: &DataPaths) -> Result<Self> {
        let mut data = Self::from_bars(io::load_bars(&paths.bars)?);
        data.books = io::load_books(&paths.book)?;
        data.sentiment = io::load_sentiment(&paths.sentiment)?;
        data.onchain = io::load_onchain(&paths.onchain)?;
        data.context = io::load_context(&paths.context)?;
        Ok(data)
    }

    pub fn write(&self, dir: &Path) -> Result<DataPaths> {
        let paths = DataPaths::in_dir(dir);
        let mut bars = self.minute.clone();
        bars.extend_from_slice(&self.hour);
        bars.extend_from_slice(&self.day);
        io::write_bars(&paths.bars, &bars).map_err(|e| CoreError::io(&paths.bars, e))?;
        io::write_books(&paths.book, &self.books).map_err(|e| CoreError::io(&paths.book, e))?;
        io::write_sentiment(&paths.sentiment, &self.sentiment).map_err(|e| CoreError::io(&paths.sentiment, e))?;
        io::write_onchain(&paths.onchain, &self.onchain).map_err(|e| CoreError::io(&paths.onchain, e))?;
        io::write_context(&paths.context, &self.context).map_err(|e| CoreError::io(&paths.context, e))?;
        Ok(paths)
    }

    pub fn bars(&self, tf: Timeframe) -> &[Bar] {
        match tf {
            Timeframe::Minute => &self.minute,
            Timeframe::Hour => &self.hour,
            Timeframe::Day => &self.day,
        }
    }

    pub fn bars_mut(&mut self, tf: Timeframe) -> &mut Vec<Bar> {
        match tf {
            Timeframe::Minute => &mut self.minute,
            Timeframe::Hour => &mut self.hour,
            Timeframe::Day => &mut self.day,
        }
    }

    /// Bars of `tf` that are complete at tick `ts`.
    pub fn bars_asof(&self, tf: Timeframe, ts: Timestamp) -> &[Bar] {
        let bars = self.bars(tf);
        let n = bars.partition_point(|b| b.available_at() <= ts);
        &bars[..n]
    }

    pub fn books_asof(&self, ts: Timestamp) -> &[OrderbookSnapshot] {
        let n = self.books.partition_point(|b| b.ts <= ts);
        &self.books[..n]
    }

    pub fn sentiment_asof(&self, ts: Timestamp) -> &[SentimentPoint] {
        let n = self.sentiment.partition_point(|p| p.ts <= ts);
        &self.sentiment[..n]
    }

    pub fn onchain_asof(&self, ts: Timestamp) -> Option<&OnChainMetrics> {
        let n = self.onchain.partition_point(|p| p.ts <= ts);
        n.checked_sub(1).map(|i| &self.onchain[i])
    }

    pub fn context_asof(&self, ts: Timestamp) -> Option<&MarketContext> {
        let n = self.context.partition_point(|p| p.ts <= ts);
        n.checked_sub(1).map(|i| &self.context[i])
    }

    /// Minute bar starting exactly at `ts`.
    pub fn minute_bar_at(&self, ts: Timestamp) -> Option<&Bar> {
        self.minute
            .binary_search_by_key(&ts, |b| b.ts)
            .ok()
            .map(|i| &self.minute[i])
    }

    /// Appends the payloads of a feed frame. Records that do not advance their
    /// series (duplicates or late arrivals) are ignored; returns how many were kept.
    pub fn ingest(&mut self, frame: &FeedFrame) -> usize {
        fn push<T>(v: &mut Vec<T>, item: T, key: impl Fn(&T) -> Timestamp) -> usize {
            if v.last().is_some_and(|last| key(last) >= key(&item)) {
                0
            } else {
                v.push(item);
                1
            }
        }
        let mut kept = 0;
        if let Some(b) = frame.bar {
            kept += push(self.bars_mut(b.timeframe), b, |b| b.ts);
        }
        if let Some(b) = &frame.book {
            kept += push(&mut self.books, b.clone(), |b| b.ts);
        }
        if let Some(p) = frame.sentiment {
            kept += push(&mut self.sentiment, p, |p| p.ts);
        }
        if let Some(p) = frame.onchain {
            kept += push(&mut self.onchain, p, |p| p.ts);
        }
        if let Some(p) = frame.context {
            kept += push(&mut self.context, p, |p| p.ts);
        }
        kept
    }

    /// First and last minute-bar timestamps.
    pub fn minute_span(&self) -> Option<(Timestamp, Timestamp)> {
        Some((self.minute.first()?.ts, self.minute.last()?.ts))
    }
}
