use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::fill::{Fill, Side};
use crate::data::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    ProfitTarget,
    Stop,
    OpposingSignal,
    /// Closed when the run ended with the position still open.
    EndOfRun,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub entry: Fill,
    pub exit: Fill,
    pub pnl: f64,
    pub holding_time_ms: i64,
    pub exit_reason: ExitReason,
}

impl Trade {
    /// Side of the opening fill.
    pub fn side(&self) -> Side {
        self.entry.side
    }

    pub fn fees(&self) -> f64 {
        self.entry.fee + self.exit.fee
    }

    /// Net result of a round trip: price move on the quantity minus both fees.
    pub fn compute_pnl(entry: &Fill, exit: &Fill) -> f64 {
        let gross = entry.side.sign() * entry.quantity * (exit.executed_price - entry.executed_price);
        gross - entry.fee - exit.fee
    }
}

/// Gross profit over gross loss, with the degenerate cases kept distinct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProfitFactor {
    /// No trade produced a profit or a loss.
    Undefined,
    /// Profits but no losses.
    Infinite,
    Finite(f64),
}

impl ProfitFactor {
    pub fn value(self) -> Option<f64> {
        match self {
            ProfitFactor::Finite(v) => Some(v),
            ProfitFactor::Infinite => Some(f64::INFINITY),
            ProfitFactor::Undefined => None,
        }
    }

    pub fn render(self) -> String {
        match self {
            ProfitFactor::Finite(v) => format!("{v:.4}"),
            ProfitFactor::Infinite => "inf".into(),
            ProfitFactor::Undefined => "undefined".into(),
        }
    }
}

impl Serialize for ProfitFactor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ProfitFactor::Finite(v) => s.serialize_f64(*v),
            ProfitFactor::Infinite => s.serialize_str("infinite"),
            ProfitFactor::Undefined => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for ProfitFactor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ProfitFactor::Finite(v)),
            Raw::Text(t) if t == "infinite" => Ok(ProfitFactor::Infinite),
            Raw::Text(t) if t == "undefined" => Ok(ProfitFactor::Undefined),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad profit factor `{t}`"))),
        }
    }
}

pub fn profit_factor_of(pnls: impl IntoIterator<Item = f64>) -> ProfitFactor {
    let mut gain = 0.0;
    let mut loss = 0.0;
    for p in pnls {
        if p > 0.0 {
            gain += p;
        } else if p < 0.0 {
            loss -= p;
        }
    }
    if loss > 0.0 {
        ProfitFactor::Finite(gain / loss)
    } else if gain > 0.0 {
        ProfitFactor::Infinite
    } else {
        ProfitFactor::Undefined
    }
}

pub fn profit_factor(trades: &[Trade]) -> ProfitFactor {
    profit_factor_of(trades.iter().map(|t| t.pnl))
}

pub fn win_rate(trades: &[Trade]) -> Option<f64> {
    if trades.is_empty() {
        return None;
    }
    Some(trades.iter().filter(|t| t.pnl > 0.0).count() as f64 / trades.len() as f64)
}

/// Largest peak-to-trough decline as a fraction of the peak.
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        if peak > 0.0 {
            worst = worst.max((peak - e) / peak);
        }
    }
    worst
}

/// Annualized ratio of mean to sample standard deviation of per-interval
/// returns; `None` when fewer than two returns or zero variance.
pub fn sharpe(equity: &[f64], periods_per_year: f64) -> Option<f64> {
    if equity.len() < 3 {
        return None;
    }
    let rets: Vec<f64> = equity.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let n = rets.len() as f64;
    let mean = rets.iter().sum::<f64>() / n;
    let var = rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return None;
    }
    Some(mean / var.sqrt() * periods_per_year.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub ts: Timestamp,
    pub equity: f64,
}
