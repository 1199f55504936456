//! Raw series → model inputs.

mod book;
mod frame;
mod indicators;
mod resample;

pub use book::{imbalance, orderbook_stats, BookWindow, OrderbookStats};
pub use frame::{
    assemble_frame, default_normalization, FeatureConfig, FeatureFrame, FrameAssembler, FrameUnavailable,
    UnavailableReason, REFERENCE_MINUTE_VOL, SENTIMENT_WINDOW,
};
pub use indicators::{bar_channels, moving_average, realized_vol, BAR_CHANNELS, BAR_WARMUP};
pub use resample::{resample, resample_complete, ResampleMode, Resampled};
