//! Direction classifier: timeframe CNN heads and an orderbook head, fused by
//! soft attention conditioned on market context, then a dense classifier
//! over buy / sell / hold.

mod attention;
mod model;
mod train;

pub use attention::{attention, mean_fusion, AttentionContext, AttentionResult, HeadOutput, HeadSource};
pub use model::{
    ConvStage, Direction, DirectionModel, DirectionModelConfig, DirectionPrediction, Fusion, Preset, CLASS_COUNT,
};
pub use train::{
    batch_gradients, evaluate_direction, load_direction_model, save_direction_model, sidecar_path, train_direction,
    DirectionSample, DirectionTrainConfig, DirectionTrainReport, EpochMetrics, ModelSidecar,
};
