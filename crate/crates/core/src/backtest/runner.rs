use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fill::{apply_fill, Fill, Side, SlippageModel};
use super::metrics::*;
use super::policy::DecisionSource;
use crate::data::{Feed, MarketData, Timestamp, MINUTE_MS};
use crate::engine::{Action, EnsembleDecision};
use crate::error::{CoreError, Result};
use crate::seed::stage_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskLimits {
    /// Cap on the equity fraction committed to one position.
    pub max_position_fraction: f64,
    /// Drawdown from peak equity that freezes new entries.
    pub max_drawdown_halt: f64,
    /// Adverse move from entry that closes a position.
    pub stop: f64,
    /// Favorable move from entry that closes a position.
    pub profit_target: f64,
}

impl Default for RiskLimits {
    fn default() -> Self {
        Self {
            max_position_fraction: 0.10,
            max_drawdown_halt: 0.20,
            stop: 0.003,
            profit_target: 0.004,
        }
    }
}

impl RiskLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_position_fraction", self.max_position_fraction),
            ("max_drawdown_halt", self.max_drawdown_halt),
            ("stop", self.stop),
            ("profit_target", self.profit_target),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CoreError::Config(format!("{name} must be in (0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub fee_rate: f64,
    pub slippage_bps_mean: f64,
    pub limits: RiskLimits,
    pub exit_on_opposing: bool,
    pub initial_equity: f64,
    /// Ticks per year, for Sharpe annualization.
    pub periods_per_year: f64,
    /// First tick that trades; earlier ticks only build history.
    pub start_ts: Option<Timestamp>,
    pub end_ts: Option<Timestamp>,
    pub seed: u64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            fee_rate: 0.0005,
            slippage_bps_mean: 2.0,
            limits: RiskLimits::default(),
            exit_on_opposing: true,
            initial_equity: 10_000.0,
            periods_per_year: 525_600.0,
            start_ts: None,
            end_ts: None,
            seed: 0,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        self.limits.validate()?;
        if !(self.fee_rate >= 0.0 && self.fee_rate < 1.0) || !(self.slippage_bps_mean >= 0.0) {
            return Err(CoreError::Config("fee rate must be in [0, 1) and slippage >= 0".into()));
        }
        if !(self.initial_equity > 0.0) || !(self.periods_per_year > 0.0) {
            return Err(CoreError::Config("initial equity and periods per year must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaltEvent {
    pub ts: Timestamp,
    pub drawdown: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub start_ts: Option<Timestamp>,
    pub end_ts: Option<Timestamp>,
    pub ticks: usize,
    pub initial_equity: f64,
    pub final_equity: f64,
    pub profit_factor: ProfitFactor,
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub win_rate: Option<f64>,
    pub trade_count: usize,
    pub halt_events: Vec<HaltEvent>,
    /// Set when the feed failed before the run finished.
    pub truncated: Option<String>,
    pub decisions_evaluated: usize,
    pub action_counts: BTreeMap<String, usize>,
    pub no_action_reasons: BTreeMap<String, usize>,
    /// Mean per-model confidence over decisions where the ensemble ran.
    pub mean_confidence: Option<f64>,
    pub trades: Vec<Trade>,
    pub equity_curve: Vec<EquityPoint>,
}

impl BacktestReport {
    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn net_pnl(&self) -> f64 {
        self.trades.iter().map(|t| t.pnl).sum()
    }

    /// Recomputes every derived figure from the trade list and equity curve.
    pub fn check_consistency(&self) -> Result<()> {
        let sum_pnl = self.net_pnl();
        if (self.final_equity - (self.initial_equity + sum_pnl)).abs() > 1e-9 {
            return Err(CoreError::Invariant(format!(
                "final equity {} != initial {} + pnl {}",
                self.final_equity, self.initial_equity, sum_pnl
            )));
        }
        if profit_factor(&self.trades) != self.profit_factor {
            return Err(CoreError::Invariant("profit factor differs from trade list".into()));
        }
        if win_rate(&self.trades) != self.win_rate || self.trades.len() != self.trade_count {
            return Err(CoreError::Invariant("win rate or trade count differs from trade list".into()));
        }
        for t in &self.trades {
            if t.exit.ts < t.entry.ts || (Trade::compute_pnl(&t.entry, &t.exit) - t.pnl).abs() > 1e-9 {
                return Err(CoreError::Invariant(format!("trade entered at {} is inconsistent", t.entry.ts)));
            }
        }
        if let Some(h) = self.halt_events.first() {
            if self.trades.iter().any(|t| t.entry.ts > h.ts) {
                return Err(CoreError::Invariant(format!("entry after risk halt at {}", h.ts)));
            }
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub struct BacktestRun {
    pub report: BacktestReport,
    pub decisions: Vec<EnsembleDecision>,
}

struct Position {
    entry: Fill,
}

struct Pending {
    side: Side,
    fraction: f64,
    exit_reason: Option<ExitReason>,
}

struct Ledger<'a> {
    cfg: &'a BacktestConfig,
    slippage: SlippageModel,
    rng: crate::seed::StageRng,
    realized: f64,
    peak: f64,
    halted: bool,
    position: Option<Position>,
    pending: Option<Pending>,
    trades: Vec<Trade>,
    curve: Vec<EquityPoint>,
    halts: Vec<HaltEvent>,
    last_close: Option<(Timestamp, f64)>,
}

impl Ledger<'_> {
    fn equity_at(&self, price: f64) -> f64 {
        match &self.position {
            None => self.realized,
            Some(p) => {
                let e = &p.entry;
                self.realized + e.side.sign() * e.quantity * (price - e.executed_price) - e.fee
            }
        }
    }

    fn fill(&mut self, ts: Timestamp, side: Side, qty: f64, price: f64) -> Result<Fill> {
        let bps = self.slippage.draw(&mut self.rng);
        apply_fill(ts, side, qty, price, self.cfg.fee_rate, bps)
    }

    fn close(&mut self, ts: Timestamp, price: f64, reason: ExitReason) -> Result<()> {
        let Some(p) = self.position.take() else {
            return Ok(());
        };
        let exit = self.fill(ts, p.entry.side.opposite(), p.entry.quantity, price)?;
        let pnl = Trade::compute_pnl(&p.entry, &exit);
        self.realized += pnl;
        self.trades.push(Trade {
            entry: p.entry,
            exit,
            pnl,
            holding_time_ms: exit.ts - p.entry.ts,
            exit_reason: reason,
        });
        Ok(())
    }

    fn execute_pending(&mut self, ts: Timestamp, price: f64) -> Result<()> {
        let Some(order) = self.pending.take() else {
            return Ok(());
        };
        match order.exit_reason {
            Some(reason) => self.close(ts, price, reason),
            None => {
                if self.halted || self.position.is_some() {
                    return Ok(());
                }
                let fraction = order.fraction.min(self.cfg.limits.max_position_fraction);
                let equity = self.equity_at(price);
                let qty = fraction * equity / price;
                if qty > 0.0 {
                    let entry = self.fill(ts, order.side, qty, price)?;
                    self.position = Some(Position { entry });
                }
                Ok(())
            }
        }
    }

    fn on_decision(&mut self, d: &EnsembleDecision, price: f64) {
        if self.pending.is_some() {
            return;
        }
        let signal = match d.action {
            Action::Buy => Some(Side::Buy),
            Action::Sell => Some(Side::Sell),
            _ => None,
        };
        if let Some(p) = &self.position {
            let e = &p.entry;
            let ret = e.side.sign() * (price / e.executed_price - 1.0);
            let reason = if ret >= self.cfg.limits.profit_target {
                Some(ExitReason::ProfitTarget)
            } else if ret <= -self.cfg.limits.stop {
                Some(ExitReason::Stop)
            } else if self.cfg.exit_on_opposing && signal == Some(e.side.opposite()) {
                Some(ExitReason::OpposingSignal)
            } else {
                None
            };
            if let Some(reason) = reason {
                self.pending = Some(Pending {
                    side: e.side.opposite(),
                    fraction: 0.0,
                    exit_reason: Some(reason),
                });
            }
        } else if let Some(side) = signal {
            if !self.halted && d.size_fraction > 0.0 {
                self.pending = Some(Pending {
                    side,
                    fraction: d.size_fraction,
                    exit_reason: None,
                });
            }
        }
    }
}

/// Replays `feed` tick by tick. Each minute tick ingests the records
/// available at it, executes the order queued on the previous tick at this
/// tick's close, marks equity, asks `source` for a decision and queues the
/// resulting entry or exit.
pub fn run_backtest(feed: &mut dyn Feed, source: &mut dyn DecisionSource, cfg: &BacktestConfig) -> Result<BacktestRun> {
    cfg.validate()?;
    let mut data = MarketData::default();
    let mut ledger = Ledger {
        cfg,
        slippage: SlippageModel::new(cfg.slippage_bps_mean)?,
        rng: stage_rng(cfg.seed, "slippage"),
        realized: cfg.initial_equity,
        peak: cfg.initial_equity,
        halted: false,
        position: None,
        pending: None,
        trades: Vec::new(),
        curve: Vec::new(),
        halts: Vec::new(),
        last_close: None,
    };
    let mut decisions = Vec::new();
    let mut truncated = None;
    let mut ticks = 0usize;
    let mut current: Option<Timestamp> = None;
    let mut first_tick = None;
    let mut last_tick = None;

    let mut process_tick = |ts: Timestamp, data: &MarketData, ledger: &mut Ledger, decisions: &mut Vec<EnsembleDecision>| -> Result<()> {
        if ts % MINUTE_MS != 0 || cfg.start_ts.is_some_and(|s| ts < s) || cfg.end_ts.is_some_and(|e| ts > e) {
            return Ok(());
        }
        let bar = data.minute_bar_at(ts).map(|b| b.close);
        if let Some(close) = bar {
            ledger.execute_pending(ts, close)?;
            ledger.last_close = Some((ts, close));
        }
        let Some((_, mark)) = ledger.last_close else {
            return Ok(());
        };
        ticks += 1;
        first_tick.get_or_insert(ts);
        last_tick = Some(ts);
        let equity = ledger.equity_at(mark);
        ledger.curve.push(EquityPoint { ts, equity });
        ledger.peak = ledger.peak.max(equity);
        let dd = 1.0 - equity / ledger.peak;
        if !ledger.halted && dd >= cfg.limits.max_drawdown_halt {
            ledger.halted = true;
            ledger.halts.push(HaltEvent { ts, drawdown: dd });
            if ledger.pending.as_ref().is_some_and(|p| p.exit_reason.is_none()) {
                ledger.pending = None;
            }
        }
        let d = source.decide(data, ts);
        if bar.is_some() {
            ledger.on_decision(&d, mark);
        }
        decisions.push(d);
        Ok(())
    };

    loop {
        let frame = match feed.next_frame() {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                truncated = Some(e.to_string());
                break;
            }
        };
        if cfg.end_ts.is_some_and(|e| frame.ts > e + MINUTE_MS) {
            break;
        }
        if let Some(t) = current {
            if frame.ts > t {
                process_tick(t, &data, &mut ledger, &mut decisions)?;
            }
        }
        current = Some(frame.ts);
        data.ingest(&frame);
    }
    if let Some(t) = current {
        process_tick(t, &data, &mut ledger, &mut decisions)?;
    }
    if let Some((ts, close)) = ledger.last_close {
        ledger.close(ts, close, ExitReason::EndOfRun)?;
        if let Some(last) = ledger.curve.last_mut() {
            last.equity = ledger.realized;
        }
    }

    let equity: Vec<f64> = ledger.curve.iter().map(|p| p.equity).collect();
    let mut action_counts = BTreeMap::new();
    let mut reasons = BTreeMap::new();
    let mut conf_sum = 0.0;
    let mut evaluated = 0usize;
    for d in &decisions {
        *action_counts.entry(d.action.as_str().to_string()).or_insert(0) += 1;
        if let Some(r) = d.reason {
            *reasons.entry(r.as_str().to_string()).or_insert(0) += 1;
        }
        if let Some(c) = d.mean_model_confidence() {
            conf_sum += c;
            evaluated += 1;
        }
    }
    let report = BacktestReport {
        start_ts: first_tick,
        end_ts: last_tick,
        ticks,
        initial_equity: cfg.initial_equity,
        final_equity: ledger.realized,
        profit_factor: profit_factor(&ledger.trades),
        sharpe: sharpe(&equity, cfg.periods_per_year),
        max_drawdown: max_drawdown(&equity),
        win_rate: win_rate(&ledger.trades),
        trade_count: ledger.trades.len(),
        halt_events: ledger.halts,
        truncated,
        decisions_evaluated: evaluated,
        action_counts,
        no_action_reasons: reasons,
        mean_confidence: (evaluated > 0).then(|| conf_sum / evaluated as f64),
        trades: ledger.trades,
        equity_curve: ledger.curve,
    };
    Ok(BacktestRun { report, decisions })
}

pub const TRADES_HEADER: &str = "entry_ts,exit_ts,side,qty,entry_px,exit_px,fees,pnl";

pub fn write_trades_csv(path: &Path, trades: &[Trade]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "{TRADES_HEADER}")?;
        for t in trades {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                t.entry.ts,
                t.exit.ts,
                t.side().as_str(),
                t.entry.quantity,
                t.entry.executed_price,
                t.exit.executed_price,
                t.fees(),
                t.pnl
            )?;
        }
        w.flush()
    };
    go().map_err(|e| CoreError::io(path, e))
}

/// `pnl` column of a `trades.csv` file.
pub fn read_trade_pnls(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CoreError::Invalid(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CoreError::Invalid(e.to_string()))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "pnl")
        .ok_or_else(|| CoreError::Invalid(format!("{}: no pnl column", path.display())))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CoreError::Invalid(e.to_string()))?;
        let v: f64 = rec[col]
            .parse()
            .map_err(|e| CoreError::Invalid(format!("{}: bad pnl: {e}", path.display())))?;
        out.push(v);
    }
    Ok(out)
}

pub fn write_report_json(path: &Path, report: &BacktestReport) -> Result<()> {
    std::fs::write(path, report.to_json_pretty()?).map_err(|e| CoreError::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<BacktestReport> {
    if !path.exists() {
        return Err(CoreError::MissingArtifact(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
