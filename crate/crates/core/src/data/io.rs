//! Flat-file readers and writers for the five input kinds.
//!
//! CSV files carry a fixed header; `book.jsonl` holds one JSON snapshot per
//! line. Every record is validated on load and timestamps must be strictly
//! increasing (per timeframe for bars). Loading never yields a partially
//! validated series.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::*;
use crate::error::LoadError;

pub const BARS_HEADER: &[&str] = &["ts", "timeframe", "open", "high", "low", "close", "volume"];
pub const SENTIMENT_HEADER: &[&str] = &["ts", "score"];
pub const ONCHAIN_HEADER: &[&str] = &["ts", "tx_count", "tx_volume"];
pub const CONTEXT_HEADER: &[&str] = &["ts", "sp500", "btc_dominance"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    Bars,
    Book,
    Sentiment,
    OnChain,
    Context,
}

impl SeriesKind {
    pub const ALL: [SeriesKind; 5] = [
        SeriesKind::Bars,
        SeriesKind::Book,
        SeriesKind::Sentiment,
        SeriesKind::OnChain,
        SeriesKind::Context,
    ];

    pub fn default_file_name(self) -> &'static str {
        match self {
            SeriesKind::Bars => "bars.csv",
            SeriesKind::Book => "book.jsonl",
            SeriesKind::Sentiment => "sentiment.csv",
            SeriesKind::OnChain => "onchain.csv",
            SeriesKind::Context => "context.csv",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SeriesKind::Bars => "bars",
            SeriesKind::Book => "book",
            SeriesKind::Sentiment => "sentiment",
            SeriesKind::OnChain => "onchain",
            SeriesKind::Context => "context",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesData {
    Bars(Vec<Bar>),
    Book(Vec<OrderbookSnapshot>),
    Sentiment(Vec<SentimentPoint>),
    OnChain(Vec<OnChainMetrics>),
    Context(Vec<MarketContext>),
}

impl SeriesData {
    pub fn len(&self) -> usize {
        match self {
            SeriesData::Bars(v) => v.len(),
            SeriesData::Book(v) => v.len(),
            SeriesData::Sentiment(v) => v.len(),
            SeriesData::OnChain(v) => v.len(),
            SeriesData::Context(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Timestamps of every record in file order.
    pub fn timestamps(&self) -> Vec<Timestamp> {
        match self {
            SeriesData::Bars(v) => v.iter().map(|b| b.ts).collect(),
            SeriesData::Book(v) => v.iter().map(|b| b.ts).collect(),
            SeriesData::Sentiment(v) => v.iter().map(|b| b.ts).collect(),
            SeriesData::OnChain(v) => v.iter().map(|b| b.ts).collect(),
            SeriesData::Context(v) => v.iter().map(|b| b.ts).collect(),
        }
    }
}

pub fn load_series(path: &Path, kind: SeriesKind) -> Result<SeriesData, LoadError> {
    Ok(match kind {
        SeriesKind::Bars => SeriesData::Bars(load_bars(path)?),
        SeriesKind::Book => SeriesData::Book(load_books(path)?),
        SeriesKind::Sentiment => SeriesData::Sentiment(load_sentiment(path)?),
        SeriesKind::OnChain => SeriesData::OnChain(load_onchain(path)?),
        SeriesKind::Context => SeriesData::Context(load_context(path)?),
    })
}

fn io_err(path: &Path, source: std::io::Error) -> LoadError {
    LoadError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, msg: impl Into<String>) -> LoadError {
    LoadError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads a CSV with the given header, handing each record (with its line
/// number) to `row`.
fn read_csv<T>(
    path: &Path,
    header: &[&str],
    mut row: impl FnMut(u64, &csv::StringRecord) -> Result<T, LoadError>,
) -> Result<Vec<T>, LoadError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let mut out = Vec::new();
    let mut saw_header = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            match e.into_kind() {
                csv::ErrorKind::Io(io) => io_err(path, io),
                other => parse_err(path, line, format!("{other:?}")),
            }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if !saw_header {
            let got: Vec<&str> = rec.iter().collect();
            if got != header {
                return Err(parse_err(path, line, format!("expected header {header:?}, got {got:?}")));
            }
            saw_header = true;
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", header.len(), rec.len()),
            ));
        }
        out.push(row(line, &rec)?);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, LoadError>
where
    T::Err: std::fmt::Display,
{
    rec[i]
        .parse::<T>()
        .map_err(|e| parse_err(path, line, format!("field `{name}`: {e} ({:?})", &rec[i])))
}

fn invariant(path: &Path, line: u64, (field, msg): (&'static str, String)) -> LoadError {
    LoadError::Invariant {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        msg,
    }
}

struct Monotone<'a> {
    path: &'a Path,
    last: BTreeMap<u8, Timestamp>,
}

impl<'a> Monotone<'a> {
    fn new(path: &'a Path) -> Self {
        Self {
            path,
            last: BTreeMap::new(),
        }
    }

    fn check(&mut self, key: u8, line: u64, ts: Timestamp) -> Result<(), LoadError> {
        if let Some(&prev) = self.last.get(&key) {
            if ts <= prev {
                return Err(LoadError::NonMonotone {
                    path: self.path.to_path_buf(),
                    line,
                    ts,
                    prev,
                });
            }
        }
        self.last.insert(key, ts);
        Ok(())
    }
}

pub fn load_bars(path: &Path) -> Result<Vec<Bar>, LoadError> {
    let mut mono = Monotone::new(path);
    read_csv(path, BARS_HEADER, |line, rec| {
        let tf = Timeframe::parse(&rec[1])
            .ok_or_else(|| parse_err(path, line, format!("unknown timeframe {:?}", &rec[1])))?;
        let bar = Bar {
            ts: field(path, line, rec, 0, "ts")?,
            timeframe: tf,
            open: field(path, line, rec, 2, "open")?,
            high: field(path, line, rec, 3, "high")?,
            low: field(path, line, rec, 4, "low")?,
            close: field(path, line, rec, 5, "close")?,
            volume: field(path, line, rec, 6, "volume")?,
        };
        bar.check().map_err(|e| invariant(path, line, e))?;
        mono.check(tf as u8, line, bar.ts)?;
        Ok(bar)
    })
}

pub fn load_sentiment(path: &Path) -> Result<Vec<SentimentPoint>, LoadError> {
    let mut mono = Monotone::new(path);
    read_csv(path, SENTIMENT_HEADER, |line, rec| {
        let p = SentimentPoint {
            ts: field(path, line, rec, 0, "ts")?,
            score: field(path, line, rec, 1, "score")?,
        };
        p.check().map_err(|e| invariant(path, line, e))?;
        mono.check(0, line, p.ts)?;
        Ok(p)
    })
}

pub fn load_onchain(path: &Path) -> Result<Vec<OnChainMetrics>, LoadError> {
    let mut mono = Monotone::new(path);
    read_csv(path, ONCHAIN_HEADER, |line, rec| {
        let p = OnChainMetrics {
            ts: field(path, line, rec, 0, "ts")?,
            tx_count: field(path, line, rec, 1, "tx_count")?,
            tx_volume: field(path, line, rec, 2, "tx_volume")?,
        };
        p.check().map_err(|e| invariant(path, line, e))?;
        mono.check(0, line, p.ts)?;
        Ok(p)
    })
}

pub fn load_context(path: &Path) -> Result<Vec<MarketContext>, LoadError> {
    let mut mono = Monotone::new(path);
    read_csv(path, CONTEXT_HEADER, |line, rec| {
        let p = MarketContext {
            ts: field(path, line, rec, 0, "ts")?,
            sp500: field(path, line, rec, 1, "sp500")?,
            btc_dominance: field(path, line, rec, 2, "btc_dominance")?,
        };
        p.check().map_err(|e| invariant(path, line, e))?;
        mono.check(0, line, p.ts)?;
        Ok(p)
    })
}

#[derive(Serialize, Deserialize)]
struct BookLine {
    ts: Timestamp,
    bids: Vec<[f64; 2]>,
    asks: Vec<[f64; 2]>,
}

impl From<&OrderbookSnapshot> for BookLine {
    fn from(s: &OrderbookSnapshot) -> Self {
        let side = |v: &[Level]| v.iter().map(|l| [l.price, l.size]).collect();
        BookLine {
            ts: s.ts,
            bids: side(&s.bids),
            asks: side(&s.asks),
        }
    }
}

pub fn load_books(path: &Path) -> Result<Vec<OrderbookSnapshot>, LoadError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut mono = Monotone::new(path);
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: BookLine = serde_json::from_str(&line).map_err(|e| parse_err(path, line_no, e.to_string()))?;
        let side = |v: Vec<[f64; 2]>| v.into_iter().map(|[price, size]| Level { price, size }).collect();
        let snap = OrderbookSnapshot {
            ts: raw.ts,
            bids: side(raw.bids),
            asks: side(raw.asks),
        };
        snap.check().map_err(|e| invariant(path, line_no, e))?;
        mono.check(0, line_no, snap.ts)?;
        out.push(snap);
    }
    Ok(out)
}

fn create(path: &Path) -> std::io::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_bars(path: &Path, bars: &[Bar]) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", BARS_HEADER.join(","))?;
    for b in bars {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            b.ts,
            b.timeframe.as_str(),
            b.open,
            b.high,
            b.low,
            b.close,
            b.volume
        )?;
    }
    w.flush()
}

pub fn write_books(path: &Path, books: &[OrderbookSnapshot]) -> std::io::Result<()> {
    let mut w = create(path)?;
    for b in books {
        serde_json::to_writer(&mut w, &BookLine::from(b))?;
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_sentiment(path: &Path, points: &[SentimentPoint]) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", SENTIMENT_HEADER.join(","))?;
    for p in points {
        writeln!(w, "{},{}", p.ts, p.score)?;
    }
    w.flush()
}

pub fn write_onchain(path: &Path, points: &[OnChainMetrics]) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", ONCHAIN_HEADER.join(","))?;
    for p in points {
        writeln!(w, "{},{},{}", p.ts, p.tx_count, p.tx_volume)?;
    }
    w.flush()
}

pub fn write_context(path: &Path, points: &[MarketContext]) -> std::io::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", CONTEXT_HEADER.join(","))?;
    for p in points {
        writeln!(w, "{},{},{}", p.ts, p.sp500, p.btc_dominance)?;
    }
    w.flush()
}

/// Locations of the five input files.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub bars: PathBuf,
    pub book: PathBuf,
    pub sentiment: PathBuf,
    pub onchain: PathBuf,
    pub context: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            bars: dir.join(SeriesKind::Bars.default_file_name()),
            book: dir.join(SeriesKind::Book.default_file_name()),
            sentiment: dir.join(SeriesKind::Sentiment.default_file_name()),
            onchain: dir.join(SeriesKind::OnChain.default_file_name()),
            context: dir.join(SeriesKind::Context.default_file_name()),
        }
    }

    pub fn get(&self, kind: SeriesKind) -> &Path {
        match kind {
            SeriesKind::Bars => &self.bars,
            SeriesKind::Book => &self.book,
            SeriesKind::Sentiment => &self.sentiment,
            SeriesKind::OnChain => &self.onchain,
            SeriesKind::Context => &self.context,
        }
    }
}
