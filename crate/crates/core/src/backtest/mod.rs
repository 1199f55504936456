//! Tick-level execution simulator, risk controls, metric suite, decision
//! sources and latency measurement.

mod fill;
mod latency;
mod metrics;
mod policy;
mod runner;

pub use fill::{apply_fill, Fill, Side, SlippageModel};
pub use latency::{measure_latency, percentiles, ExchangeDelay, LatencyReport, Percentiles};
pub use metrics::{
    max_drawdown, profit_factor, profit_factor_of, sharpe, win_rate, EquityPoint, ExitReason, ProfitFactor, Trade,
};
pub use policy::{DecisionSource, EnginePolicy, RandomPolicy, ScriptedPolicy, StageTiming};
pub use runner::{
    read_report_json, read_trade_pnls, run_backtest, write_report_json, write_trades_csv, BacktestConfig,
    BacktestReport, BacktestRun, HaltEvent, RiskLimits, TRADES_HEADER,
};
