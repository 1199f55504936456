//! Time-stamped market inputs, their file formats, gap detection, fixed
//! normalization and the replay / simulated-live feeds.

mod feed;
mod gaps;
pub mod io;
mod market;
mod normalize;
mod types;

pub use feed::{collect_frames, replay_frames, FaultConfig, Feed, FeedFrame, PayloadKind, ReplayFeed, SimulatedLiveFeed};
pub use gaps::{detect_gaps, missing_count};
pub use io::{load_series, DataPaths, SeriesData, SeriesKind};
pub use market::MarketData;
pub use normalize::{normalize, NormalizationSpec};
pub use types::*;
