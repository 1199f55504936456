//! Trend scoring: a small tanh network mapping dominance, on-chain volume and
//! multi-timeframe moving-average positions to a score in [-1, 1].

use std::io::Write;
use std::path::Path;

use ptnn::{LayerSpec, ParameterSet, Sequential, Sgd, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{MarketData, NormalizationSpec, Timeframe, Timestamp};
use crate::error::{CoreError, Result};
use crate::features::{FrameUnavailable, UnavailableReason};
use crate::par::Parallelism;
use crate::seed::stage_rng;

pub const TREND_INPUTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendInputs {
    pub btc_dominance: f64,
    pub tx_volume_norm: f64,
    pub ma_daily: f64,
    pub ma_weekly: f64,
    pub ma_monthly: f64,
}

impl TrendInputs {
    pub fn to_array(&self) -> [f64; TREND_INPUTS] {
        [self.btc_dominance, self.tx_volume_norm, self.ma_daily, self.ma_weekly, self.ma_monthly]
    }

    pub fn from_array(v: [f64; TREND_INPUTS]) -> Self {
        Self {
            btc_dominance: v[0],
            tx_volume_norm: v[1],
            ma_daily: v[2],
            ma_weekly: v[3],
            ma_monthly: v[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendScore {
    pub value: f64,
    pub ts: Timestamp,
}

/// Hourly / daily closes behind the three moving-average inputs.
pub const MA_DAILY_HOURS: usize = 24;
pub const MA_WEEKLY_DAYS: usize = 7;
pub const MA_MONTHLY_DAYS: usize = 30;

/// Normalization keys used by [`trend_inputs`].
pub const TREND_FEATURES: [&str; 5] = [
    "context.btc_dominance",
    "onchain.tx_volume",
    "trend.ma_daily",
    "trend.ma_weekly",
    "trend.ma_monthly",
];

/// Trend inputs observable at tick `ts`: each moving average enters as the
/// relative distance of the latest close from it.
pub fn trend_inputs(
    data: &MarketData,
    ts: Timestamp,
    spec: &NormalizationSpec,
    max_age_ms: i64,
) -> std::result::Result<TrendInputs, FrameUnavailable> {
    let insufficient = |src: &'static str, d: String| FrameUnavailable::new(UnavailableReason::InsufficientHistory, src, d);
    let minute = data.bars_asof(Timeframe::Minute, ts);
    let close = match minute.last() {
        Some(b) if b.ts == ts => b.close,
        Some(_) => return Err(FrameUnavailable::new(UnavailableReason::Gap, "minute", "no bar at tick")),
        None => return Err(insufficient("minute", "no bars".into())),
    };
    let mean_close = |tf: Timeframe, n: usize, name: &'static str| -> std::result::Result<f64, FrameUnavailable> {
        let bars = data.bars_asof(tf, ts);
        if bars.len() < n {
            return Err(insufficient(name, format!("{} of {n} bars", bars.len())));
        }
        Ok(bars[bars.len() - n..].iter().map(|b| b.close).sum::<f64>() / n as f64)
    };
    let ma_d = mean_close(Timeframe::Hour, MA_DAILY_HOURS, "hour")?;
    let ma_w = mean_close(Timeframe::Day, MA_WEEKLY_DAYS, "day")?;
    let ma_m = mean_close(Timeframe::Day, MA_MONTHLY_DAYS, "day")?;
    let onchain = data
        .onchain_asof(ts)
        .ok_or_else(|| insufficient("onchain", "no record yet".into()))?;
    let ctx = data
        .context_asof(ts)
        .ok_or_else(|| insufficient("context", "no record yet".into()))?;
    if ts - onchain.ts > max_age_ms {
        return Err(FrameUnavailable::new(UnavailableReason::Stale, "onchain", format!("record from {}", onchain.ts)));
    }
    if ts - ctx.ts > max_age_ms {
        return Err(FrameUnavailable::new(UnavailableReason::Stale, "context", format!("record from {}", ctx.ts)));
    }
    let raw = [
        ctx.btc_dominance,
        onchain.tx_volume,
        close / ma_d - 1.0,
        close / ma_w - 1.0,
        close / ma_m - 1.0,
    ];
    let mut v = [0.0; TREND_INPUTS];
    for (i, (name, r)) in TREND_FEATURES.iter().zip(raw).enumerate() {
        v[i] = spec
            .normalize(name, r)
            .map_err(|e| FrameUnavailable::new(UnavailableReason::NonFinite, "trend", e.to_string()))?;
    }
    let inputs = TrendInputs::from_array(v);
    if !inputs.is_finite() {
        return Err(FrameUnavailable::new(UnavailableReason::NonFinite, "trend", "non-finite input"));
    }
    Ok(inputs)
}

/// Sign-scaled forward return: `sign(r) · min(1, |r| / scale)`.
pub fn trend_label(forward_return: f64, scale: f64) -> f64 {
    forward_return.signum() * (forward_return.abs() / scale).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub hidden: Vec<usize>,
    pub lambda_l2: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Forward window of the training label, in minutes.
    pub label_horizon_minutes: usize,
    /// Return magnitude that maps to a label of ±1.
    pub label_scale: f64,
    pub seed: u64,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 8],
            lambda_l2: 1e-4,
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            label_horizon_minutes: 1440,
            label_scale: 0.05,
            seed: 0,
        }
    }
}

impl TrendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) || self.batch_size == 0 || self.label_horizon_minutes == 0 {
            return Err(CoreError::Config("trend widths, batch size and horizon must be >= 1".into()));
        }
        if !(self.label_scale > 0.0) || !(self.lambda_l2 >= 0.0) || !(self.learning_rate > 0.0) {
            return Err(CoreError::Config("trend label scale and learning rate must be > 0, lambda >= 0".into()));
        }
        Ok(())
    }
}

/// Dense tanh stack ending in a single tanh unit.
#[derive(Debug, Clone)]
pub struct TrendNet {
    pub net: Sequential,
    pub params: ParameterSet,
}

impl TrendNet {
    pub fn architecture(hidden: &[usize]) -> Result<Sequential> {
        let mut layers = Vec::new();
        let mut width = TREND_INPUTS;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(LayerSpec::Dense {
                inputs: width,
                outputs: h,
            });
            layers.push(LayerSpec::Tanh);
            width = h;
        }
        Ok(Sequential::new("trend", layers)?)
    }

    pub fn new(hidden: &[usize], seed: u64) -> Result<Self> {
        let net = Self::architecture(hidden)?;
        let mut params = ParameterSet::new();
        net.init_params(&mut params, &mut stage_rng(seed, "trend.init"))?;
        Ok(Self { net, params })
    }

    pub fn from_params(hidden: &[usize], params: ParameterSet) -> Result<Self> {
        let net = Self::architecture(hidden)?;
        for name in net.param_names() {
            params.get(&name)?;
        }
        Ok(Self { net, params })
    }

    pub fn score(&self, x: &[f64; TREND_INPUTS]) -> Result<f64> {
        let out = self.net.forward(&self.params, &Tensor::vector(x.to_vec()))?;
        Ok(out.values()[0])
    }
}

pub fn evaluate_trend(inputs: &TrendInputs, ts: Timestamp, net: &TrendNet) -> Result<TrendScore> {
    if !inputs.is_finite() {
        return Err(CoreError::Invalid("non-finite trend input".into()));
    }
    Ok(TrendScore {
        value: net.score(&inputs.to_array())?,
        ts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTrainReport {
    /// Mean squared error (without the L2 term) after each epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
}

fn mse_gradients(model: &TrendNet, batch: &[(TrendInputs, f64)]) -> Result<(f64, ptnn::Gradients)> {
    let mut grads = model.params.zero_gradients();
    let mut sq = 0.0;
    for (x, t) in batch {
        let trace = model.net.forward_trace(&model.params, &Tensor::vector(x.to_array().to_vec()))?;
        let err = trace.output().values()[0] - t;
        sq += err * err;
        model
            .net
            .backward_trace(&model.params, &trace, &[2.0 * err / batch.len() as f64], &mut grads)?;
    }
    Ok((sq / batch.len() as f64, grads))
}

/// Mean squared error of `model` on `data`.
pub fn trend_mse(model: &TrendNet, data: &[(TrendInputs, f64)], par: Parallelism) -> Result<f64> {
    if data.is_empty() {
        return Err(CoreError::Invalid("empty dataset".into()));
    }
    let errs = par.map(data, |(x, t)| model.score(&x.to_array()).map(|y| (y - t) * (y - t)));
    let mut sum = 0.0;
    for e in errs {
        sum += e?;
    }
    Ok(sum / data.len() as f64)
}

/// Mini-batch SGD on mean squared error plus L2 on weights.
pub fn train_trend(dataset: &[(TrendInputs, f64)], cfg: &TrendConfig) -> Result<(TrendNet, TrendTrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Invalid("empty trend dataset".into()));
    }
    if let Some((_, t)) = dataset.iter().find(|(x, t)| !x.is_finite() || !t.is_finite() || t.abs() > 1.0) {
        return Err(CoreError::Invalid(format!("bad trend sample (target {t})")));
    }
    let mut model = TrendNet::new(&cfg.hidden, cfg.seed)?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum)?;
    let mut rng = stage_rng(cfg.seed, "trend.shuffle");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sq = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(TrendInputs, f64)> = chunk.iter().map(|i| dataset[*i]).collect();
            let (mse, mut grads) = mse_gradients(&model, &batch)?;
            epoch_sq += mse * batch.len() as f64;
            grads.finalize(&model.params, cfg.lambda_l2);
            opt.step(&mut model.params, &grads)?;
        }
        history.push(epoch_sq / dataset.len() as f64);
    }
    let final_loss = trend_mse(&model, dataset, Parallelism::Sequential)?;
    Ok((
        model,
        TrendTrainReport {
            loss_history: history,
            final_loss,
        },
    ))
}

/// `trend.csv` with one `ts,score` row per scored tick.
pub fn write_trend_csv(path: &Path, scores: &[TrendScore]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "ts,score")?;
        for s in scores {
            writeln!(w, "{},{}", s.ts, s.value)?;
        }
        w.flush()
    };
    go().map_err(|e| CoreError::io(path, e))
}
