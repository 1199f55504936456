//! Two-stage trading pipeline: market data and feeds, feature frames,
//! trend scoring, attention-fused direction networks, the regime-gated
//! ensemble and a tick-level execution simulator with backtest reporting.

pub mod backtest;
pub mod config;
pub mod data;
pub mod direction;
pub mod engine;
pub mod error;
pub mod features;
pub mod par;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod trend;

pub use error::{CoreError, LoadError, Result};
