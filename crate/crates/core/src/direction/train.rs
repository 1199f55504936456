use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use ptnn::{read_checkpoint, write_checkpoint, Gradients, ParameterSet, Sgd};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::attention::AttentionContext;
use super::model::{DirectionModel, DirectionModelConfig, CLASS_COUNT};
use crate::error::{CoreError, Result};
use crate::features::{FeatureConfig, FeatureFrame};
use crate::par::Parallelism;
use crate::seed::stage_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSample {
    pub frame: FeatureFrame,
    pub ctx: AttentionContext,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Trailing share of the (time-ordered) dataset held out for validation.
    pub validation_fraction: f64,
    /// Keep the parameters of the epoch with the lowest validation loss.
    pub keep_best: bool,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for DirectionTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.02,
            momentum: 0.9,
            validation_fraction: 0.2,
            keep_best: true,
            seed: 0,
            parallelism: Parallelism::default(),
        }
    }
}

impl DirectionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Config("epochs and batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::Config("need learning rate > 0 and momentum in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(CoreError::Config("validation fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub validation_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionTrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub train_samples: usize,
    pub validation_samples: usize,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
}

impl DirectionTrainReport {
    pub fn final_metrics(&self) -> &EpochMetrics {
        &self.epochs[self.selected_epoch]
    }
}

/// Samples per gradient work unit; fixed so results do not depend on thread count.
const GRAD_CHUNK: usize = 8;

/// Mean cross-entropy gradient of a batch (without L2), summed over fixed
/// chunks in order so parallel and sequential runs agree bit for bit.
pub fn batch_gradients(
    model: &DirectionModel,
    batch: &[&DirectionSample],
    par: Parallelism,
) -> Result<(f64, Gradients)> {
    let scale = 1.0 / batch.len() as f64;
    let parts = par.map_chunks(batch, GRAD_CHUNK, |chunk| -> Result<(f64, Gradients)> {
        let mut g = model.params.zero_gradients();
        let mut loss = 0.0;
        for s in chunk {
            loss += model.accumulate_gradients(&s.frame, &s.ctx, s.label, scale, &mut g)?;
        }
        Ok((loss, g))
    });
    let mut total = model.params.zero_gradients();
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_assign(&g)?;
    }
    Ok((loss * scale, total))
}

/// Mean cross-entropy (without L2) and accuracy of `model` on `data`.
pub fn evaluate_direction(model: &DirectionModel, data: &[DirectionSample], par: Parallelism) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(CoreError::Invalid("empty evaluation set".into()));
    }
    let rows = par.map(data, |s| {
        model.predict(&s.frame, &s.ctx).map(|p| {
            let loss = -p.probs[s.label].max(ptnn::LOG_EPSILON).ln();
            (loss, p.predicted_class.index() == s.label)
        })
    });
    let mut loss = 0.0;
    let mut hits = 0usize;
    for r in rows {
        let (l, hit) = r?;
        loss += l;
        hits += hit as usize;
    }
    Ok((loss / data.len() as f64, hits as f64 / data.len() as f64))
}

/// Mini-batch SGD on cross-entropy with L2 on weights.
pub fn train_direction(
    dataset: &[DirectionSample],
    model_cfg: DirectionModelConfig,
    cfg: &DirectionTrainConfig,
) -> Result<(DirectionModel, DirectionTrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Invalid("empty direction dataset".into()));
    }
    if let Some(s) = dataset.iter().find(|s| s.label >= CLASS_COUNT) {
        return Err(CoreError::Invalid(format!("label {} out of range", s.label)));
    }
    let n_val = ((dataset.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = if n_val == dataset.len() { 0 } else { n_val };
    let (train, val) = dataset.split_at(dataset.len() - n_val);

    let mut model = DirectionModel::new(model_cfg, cfg.seed)?;
    let lambda = model.config.lambda_l2;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut rng = stage_rng(cfg.seed, "direction.shuffle");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParameterSet)> = None;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&DirectionSample> = idx.iter().map(|i| &train[*i]).collect();
            let (_, mut grads) = batch_gradients(&model, &batch, cfg.parallelism)?;
            grads.finalize(&model.params, lambda);
            opt.step(&mut model.params, &grads)?;
        }
        let (train_loss, train_accuracy) = evaluate_direction(&model, train, cfg.parallelism)?;
        let validation = if val.is_empty() {
            None
        } else {
            Some(evaluate_direction(&model, val, cfg.parallelism)?)
        };
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            validation_loss: validation.map(|v| v.0),
            validation_accuracy: validation.map(|v| v.1),
        });
        if cfg.keep_best {
            let score = validation.map_or(train_loss, |v| v.0);
            if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                best = Some((score, epoch, model.params.clone()));
            }
        }
    }
    let selected_epoch = match best {
        Some((_, e, params)) => {
            model.params = params;
            e
        }
        None => cfg.epochs - 1,
    };
    Ok((
        model,
        DirectionTrainReport {
            epochs,
            train_samples: train.len(),
            validation_samples: val.len(),
            selected_epoch,
        },
    ))
}

/// Sidecar record written next to each model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub config: DirectionModelConfig,
    pub param_count: usize,
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_direction_model(model: &DirectionModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| CoreError::io(path, e))?;
    write_checkpoint(BufWriter::new(f), &model.params)?;
    let side = sidecar_path(path);
    let record = ModelSidecar {
        config: model.config.clone(),
        param_count: model.param_count(),
    };
    std::fs::write(&side, serde_json::to_string_pretty(&record)?).map_err(|e| CoreError::io(&side, e))?;
    Ok(())
}

/// Loads a checkpoint and refuses it when its feature schema differs from `features`.
pub fn load_direction_model(path: &Path, features: &FeatureConfig) -> Result<DirectionModel> {
    let side = sidecar_path(path);
    if !path.exists() {
        return Err(CoreError::MissingArtifact(path.to_path_buf()));
    }
    if !side.exists() {
        return Err(CoreError::MissingArtifact(side));
    }
    let text = std::fs::read_to_string(&side).map_err(|e| CoreError::io(&side, e))?;
    let record: ModelSidecar = serde_json::from_str(&text)?;
    let want = features.schema_hash();
    if record.config.schema_hash != want {
        return Err(CoreError::Shape(format!(
            "model {} was trained on feature schema {}, current schema is {want}",
            path.display(),
            record.config.schema_hash
        )));
    }
    let f = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let tensors = read_checkpoint(BufReader::new(f))?;
    let mut fresh = DirectionModel::new(record.config.clone(), 0)?;
    ptnn::load_into(&mut fresh.params, tensors)?;
    DirectionModel::with_params(record.config, fresh.params)
}
