//! End-to-end orchestration: chronological split, trend and direction
//! training, artifact persistence, backtests, the fusion ablation and the
//! latency measurement.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backtest::{
    measure_latency, profit_factor_of, run_backtest, write_report_json, write_trades_csv, BacktestRun, EnginePolicy,
    LatencyReport, ProfitFactor, RandomPolicy,
};
use crate::config::RunConfig;
use crate::data::{Feed, MarketData, ReplayFeed, SimulatedLiveFeed, Timestamp, MINUTE_MS};
use crate::direction::{
    load_direction_model, save_direction_model, train_direction, AttentionContext, Direction, DirectionModel,
    DirectionSample, DirectionTrainReport, Fusion,
};
use crate::engine::{write_decisions_jsonl, Regime, RegimeBook, SharedPredictor};
use crate::error::{CoreError, Result};
use crate::features::FrameAssembler;
use crate::seed::stage_seed;
use crate::trend::{evaluate_trend, train_trend, trend_inputs, trend_label, TrendInputs, TrendNet, TrendScore, TrendTrainReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TREND_CHECKPOINT: &str = "trend.ckpt";
pub const MODELS_DIR: &str = "models";

/// First backtest tick: the minute span is cut at `train_fraction`.
pub fn split_ts(data: &MarketData, train_fraction: f64) -> Result<Timestamp> {
    let (first, last) = data
        .minute_span()
        .ok_or_else(|| CoreError::Invalid("no minute bars".into()))?;
    let minutes = (last - first) / MINUTE_MS;
    let cut = ((minutes as f64) * train_fraction).round() as i64;
    if cut <= 0 || cut >= minutes {
        return Err(CoreError::Invalid(format!("train fraction {train_fraction} leaves an empty split")));
    }
    Ok(first + cut * MINUTE_MS)
}

fn close_at(data: &MarketData, ts: Timestamp) -> Option<f64> {
    data.minute_bar_at(ts).map(|b| b.close)
}

/// Class of the log return from the close after `ts` (the fill tick) to
/// `horizon` minutes later. Returns within `hold_band` are hold.
pub fn direction_label(data: &MarketData, ts: Timestamp, horizon: usize, hold_band: f64) -> Option<Direction> {
    let c0 = close_at(data, ts + MINUTE_MS)?;
    let c1 = close_at(data, ts + (1 + horizon as i64) * MINUTE_MS)?;
    let r = (c1 / c0).ln();
    Some(if r > hold_band {
        Direction::Buy
    } else if r < -hold_band {
        Direction::Sell
    } else {
        Direction::Hold
    })
}

fn trend_max_age(cfg: &RunConfig) -> i64 {
    cfg.features.context_max_age_ms.max(cfg.features.onchain_max_age_ms)
}

/// Trend scores at every full hour where the inputs are available.
pub fn hourly_trend_scores(data: &MarketData, trend: &TrendNet, cfg: &RunConfig) -> Vec<TrendScore> {
    data.minute
        .iter()
        .filter(|b| b.ts % crate::data::HOUR_MS == 0)
        .filter_map(|b| {
            let x = trend_inputs(data, b.ts, &cfg.normalization, trend_max_age(cfg)).ok()?;
            evaluate_trend(&x, b.ts, trend).ok()
        })
        .collect()
}

/// Trend training rows whose label window closes before `end`.
pub fn trend_dataset(data: &MarketData, cfg: &RunConfig, end: Timestamp) -> Vec<(Timestamp, TrendInputs, f64)> {
    let Some((first, _)) = data.minute_span() else {
        return Vec::new();
    };
    let h = cfg.trend.label_horizon_minutes as i64 * MINUTE_MS;
    let stride = cfg.trend_sample_stride_minutes as i64 * MINUTE_MS;
    let mut out = Vec::new();
    let mut ts = first;
    while ts + h < end {
        if let Ok(x) = trend_inputs(data, ts, &cfg.normalization, trend_max_age(cfg)) {
            if let (Some(c0), Some(c1)) = (close_at(data, ts), close_at(data, ts + h)) {
                out.push((ts, x, trend_label((c1 / c0).ln(), cfg.trend.label_scale)));
            }
        }
        ts += stride;
    }
    out
}

/// A labelled direction sample plus the trend score it was built with.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub sample: DirectionSample,
    pub trend: TrendScore,
}

/// Direction samples whose label window closes before `end`, evenly thinned
/// to at most `max_samples`.
pub fn direction_dataset(
    data: &MarketData,
    assembler: &FrameAssembler,
    trend: &TrendNet,
    cfg: &RunConfig,
    end: Timestamp,
) -> Result<Vec<ScoredSample>> {
    let Some((first, _)) = data.minute_span() else {
        return Ok(Vec::new());
    };
    let l = &cfg.labels;
    let stride = l.sample_stride_minutes as i64 * MINUTE_MS;
    let mut candidates = Vec::new();
    let mut ts = first;
    while ts + (1 + l.horizon_minutes as i64) * MINUTE_MS < end {
        if let Some(d) = direction_label(data, ts, l.horizon_minutes, l.hold_band) {
            candidates.push((ts, d));
        }
        ts += stride;
    }
    // frames need long history, so drop the unusable head before thinning
    let usable: Vec<(Timestamp, Direction)> = cfg
        .parallelism
        .map(&candidates, |(ts, _)| assembler.assemble(data, *ts).is_ok())
        .into_iter()
        .zip(&candidates)
        .filter_map(|(ok, c)| ok.then_some(*c))
        .collect();
    let picked: Vec<(Timestamp, Direction)> = if usable.len() > l.max_samples {
        (0..l.max_samples).map(|i| usable[i * usable.len() / l.max_samples]).collect()
    } else {
        usable
    };
    let rows = cfg.parallelism.map(&picked, |&(ts, label)| -> Option<ScoredSample> {
        let frame = assembler.assemble(data, ts).ok()?;
        let inputs = trend_inputs(data, ts, &cfg.normalization, trend_max_age(cfg)).ok()?;
        let score = evaluate_trend(&inputs, ts, trend).ok()?;
        let ctx = AttentionContext::new(score.value, frame.realized_vol);
        Some(ScoredSample {
            sample: DirectionSample {
                frame,
                ctx,
                label: label.index(),
            },
            trend: score,
        })
    });
    Ok(rows.into_iter().flatten().collect())
}

/// One trained direction network and the subset it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub file: String,
    /// `all` or a regime name.
    pub subset: String,
    pub member: usize,
    pub samples: usize,
    pub report: DirectionTrainReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_hash: String,
    pub split_ts: Timestamp,
    pub fusion: Fusion,
    pub trend_hidden: Vec<usize>,
    pub trend_samples: usize,
    pub trend_report: TrendTrainReport,
    pub direction_samples: usize,
    /// Training samples per class, indexed buy, sell, hold.
    pub label_counts: [usize; 3],
    pub regime_samples: BTreeMap<String, usize>,
    pub models: Vec<ModelEntry>,
    /// Indices into `models` for each regime.
    pub regimes: BTreeMap<String, Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct TrainedEngine {
    pub trend: TrendNet,
    pub models: Vec<Arc<DirectionModel>>,
    pub manifest: Manifest,
}

/// Trains the trend network and, from its scores, the direction ensemble.
pub fn train_engine(data: &MarketData, cfg: &RunConfig) -> Result<TrainedEngine> {
    let (trend, trend_rows, trend_report, split) = train_trend_stage(data, cfg)?;
    let assembler = FrameAssembler::new(cfg.features.clone(), cfg.normalization.clone())?;
    let samples = direction_dataset(data, &assembler, &trend, cfg, split)?;
    train_ensemble(trend, trend_rows, trend_report, split, &samples, cfg, cfg.model.fusion)
}

fn train_trend_stage(data: &MarketData, cfg: &RunConfig) -> Result<(TrendNet, usize, TrendTrainReport, Timestamp)> {
    cfg.validate()?;
    let split = split_ts(data, cfg.train_fraction)?;
    let rows = trend_dataset(data, cfg, split);
    if rows.is_empty() {
        return Err(CoreError::Invalid("no trend training samples before the split".into()));
    }
    let ds: Vec<(TrendInputs, f64)> = rows.iter().map(|(_, x, y)| (*x, *y)).collect();
    let (trend, report) = train_trend(&ds, &cfg.trend)?;
    Ok((trend, rows.len(), report, split))
}

/// Trains `models_per_regime` members per regime. A regime with fewer than
/// `min_regime_samples` samples reuses the members trained on all samples;
/// identical subsets are trained once.
pub fn train_ensemble(
    trend: TrendNet,
    trend_samples: usize,
    trend_report: TrendTrainReport,
    split: Timestamp,
    samples: &[ScoredSample],
    cfg: &RunConfig,
    fusion: Fusion,
) -> Result<TrainedEngine> {
    if samples.is_empty() {
        return Err(CoreError::Invalid("no direction training samples before the split".into()));
    }
    let regime_of = |s: &ScoredSample| {
        if s.trend.value < cfg.t_bear {
            Regime::Bearish
        } else if s.trend.value > cfg.t_bull {
            Regime::Bullish
        } else {
            Regime::Neutral
        }
    };
    let mut label_counts = [0usize; 3];
    for s in samples {
        label_counts[s.sample.label] += 1;
    }
    let mut regime_samples = BTreeMap::new();
    let mut subsets: Vec<(String, Vec<DirectionSample>)> = Vec::new();
    let mut subset_of = [0usize; 3];
    for regime in Regime::ALL {
        let own: Vec<DirectionSample> = samples
            .iter()
            .filter(|s| regime_of(s) == regime)
            .map(|s| s.sample.clone())
            .collect();
        regime_samples.insert(regime.as_str().to_string(), own.len());
        let name = if own.len() >= cfg.model.min_regime_samples {
            subsets.push((regime.as_str().to_string(), own));
            regime.as_str().to_string()
        } else {
            "all".to_string()
        };
        if name == "all" && !subsets.iter().any(|(n, _)| n == "all") {
            subsets.push(("all".into(), samples.iter().map(|s| s.sample.clone()).collect()));
        }
        subset_of[regime.index()] = subsets.iter().position(|(n, _)| *n == name).expect("subset registered");
    }

    let model_cfg = cfg.model.direction_config(&cfg.features).with_fusion(fusion);
    let mut models = Vec::new();
    let mut entries = Vec::new();
    let mut trained: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut regimes = BTreeMap::new();
    for regime in Regime::ALL {
        let sub = subset_of[regime.index()];
        let mut ids = Vec::new();
        for member in 0..cfg.model.models_per_regime {
            let id = match trained.get(&(sub, member)) {
                Some(id) => *id,
                None => {
                    let mut tcfg = cfg.direction_train.clone();
                    tcfg.seed = stage_seed(cfg.seed, &format!("direction.member{member}"));
                    tcfg.parallelism = cfg.parallelism;
                    let (name, data) = &subsets[sub];
                    let (model, report) = train_direction(data, model_cfg.clone(), &tcfg)?;
                    let id = models.len();
                    models.push(Arc::new(model));
                    entries.push(ModelEntry {
                        file: format!("{MODELS_DIR}/{name}_{member}.ckpt"),
                        subset: name.clone(),
                        member,
                        samples: data.len(),
                        report,
                    });
                    trained.insert((sub, member), id);
                    id
                }
            };
            ids.push(id);
        }
        regimes.insert(regime.as_str().to_string(), ids);
    }

    Ok(TrainedEngine {
        manifest: Manifest {
            schema_hash: cfg.features.schema_hash(),
            split_ts: split,
            fusion,
            trend_hidden: cfg.trend.hidden.clone(),
            trend_samples,
            trend_report,
            direction_samples: samples.len(),
            label_counts,
            regime_samples,
            models: entries,
            regimes,
        },
        trend,
        models,
    })
}

impl TrainedEngine {
    pub fn regime_book(&self, cfg: &RunConfig) -> Result<RegimeBook> {
        let pick = |r: Regime| -> Result<Vec<SharedPredictor>> {
            let ids = self
                .manifest
                .regimes
                .get(r.as_str())
                .ok_or_else(|| CoreError::Invalid(format!("manifest has no {} models", r.as_str())))?;
            ids.iter()
                .map(|i| {
                    self.models
                        .get(*i)
                        .map(|m| m.clone() as SharedPredictor)
                        .ok_or_else(|| CoreError::Invalid(format!("manifest model index {i} out of range")))
                })
                .collect()
        };
        RegimeBook::new(
            [pick(Regime::Bearish)?, pick(Regime::Neutral)?, pick(Regime::Bullish)?],
            cfg.t_bear,
            cfg.t_bull,
        )
    }

    pub fn policy(&self, cfg: &RunConfig) -> Result<EnginePolicy> {
        let assembler = FrameAssembler::new(cfg.features.clone(), cfg.normalization.clone())?;
        let mut p = EnginePolicy::new(assembler, self.trend.clone(), self.regime_book(cfg)?, cfg.thresholds.clone());
        p.trend_max_age_ms = trend_max_age(cfg);
        Ok(p)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let models_dir = dir.join(MODELS_DIR);
        std::fs::create_dir_all(&models_dir).map_err(|e| CoreError::io(&models_dir, e))?;
        let tp = dir.join(TREND_CHECKPOINT);
        let f = File::create(&tp).map_err(|e| CoreError::io(&tp, e))?;
        ptnn::write_checkpoint(BufWriter::new(f), &self.trend.params)?;
        for (m, e) in self.models.iter().zip(&self.manifest.models) {
            save_direction_model(m, &dir.join(&e.file))?;
        }
        let mp = dir.join(MANIFEST_FILE);
        std::fs::write(&mp, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| CoreError::io(&mp, e))
    }

    /// Loads artifacts written by [`TrainedEngine::save`]; absent files are
    /// reported as missing artifacts.
    pub fn load(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        let mp = dir.join(MANIFEST_FILE);
        if !mp.is_file() {
            return Err(CoreError::MissingArtifact(mp));
        }
        let text = std::fs::read_to_string(&mp).map_err(|e| CoreError::io(&mp, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let want = cfg.features.schema_hash();
        if manifest.schema_hash != want {
            return Err(CoreError::Shape(format!(
                "artifacts use feature schema {}, config gives {want}",
                manifest.schema_hash
            )));
        }
        let tp = dir.join(TREND_CHECKPOINT);
        if !tp.is_file() {
            return Err(CoreError::MissingArtifact(tp));
        }
        let f = File::open(&tp).map_err(|e| CoreError::io(&tp, e))?;
        let mut trend = TrendNet::new(&manifest.trend_hidden, 0)?;
        ptnn::load_into(&mut trend.params, ptnn::read_checkpoint(BufReader::new(f))?)?;
        let models = manifest
            .models
            .iter()
            .map(|e| load_direction_model(&dir.join(&e.file), &cfg.features).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trend, models, manifest })
    }
}

fn make_feed(data: &MarketData, cfg: &RunConfig) -> Result<Box<dyn Feed>> {
    let replay = ReplayFeed::new(data);
    if cfg.feed.is_noop() {
        Ok(Box::new(replay))
    } else {
        Ok(Box::new(SimulatedLiveFeed::new(replay, cfg.feed.clone())?))
    }
}

fn backtest_config(cfg: &RunConfig, split: Timestamp) -> crate::backtest::BacktestConfig {
    let mut b = cfg.backtest.clone();
    b.start_ts = Some(b.start_ts.map_or(split, |s| s.max(split)));
    b
}

/// Replays the whole dataset through the engine, trading from the split on.
pub fn backtest_engine(data: &MarketData, engine: &TrainedEngine, cfg: &RunConfig) -> Result<BacktestRun> {
    let mut policy = engine.policy(cfg)?;
    let mut feed = make_feed(data, cfg)?;
    let run = run_backtest(feed.as_mut(), &mut policy, &backtest_config(cfg, engine.manifest.split_ts))?;
    run.report.check_consistency()?;
    Ok(run)
}

/// Random-entry baseline over the same span, small size tier and barriers.
pub fn backtest_random(data: &MarketData, cfg: &RunConfig) -> Result<BacktestRun> {
    let split = split_ts(data, cfg.train_fraction)?;
    let mut policy = RandomPolicy::new(cfg.seed, cfg.baseline_entry_prob, cfg.thresholds.size_small);
    let mut feed = make_feed(data, cfg)?;
    let run = run_backtest(feed.as_mut(), &mut policy, &backtest_config(cfg, split))?;
    run.report.check_consistency()?;
    Ok(run)
}

pub const REPORT_FILE: &str = "report.json";
pub const TRADES_FILE: &str = "trades.csv";
pub const DECISIONS_FILE: &str = "decisions.jsonl";

/// Writes `report.json`, `trades.csv` and `decisions.jsonl` into `dir`.
pub fn write_backtest_outputs(dir: &Path, run: &BacktestRun) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    write_report_json(&dir.join(REPORT_FILE), &run.report)?;
    write_trades_csv(&dir.join(TRADES_FILE), &run.report.trades)?;
    write_decisions_jsonl(&dir.join(DECISIONS_FILE), &run.decisions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub profit_factor: ProfitFactor,
    pub mean_confidence: Option<f64>,
    pub trade_count: usize,
    pub win_rate: Option<f64>,
    pub final_equity: f64,
    /// Trades file of this variant, relative to the ablation directory.
    pub trades_file: String,
}

pub struct AblationRun {
    pub rows: Vec<AblationRow>,
    pub runs: Vec<BacktestRun>,
}

/// Trains the attention and mean-fusion variants on identical samples and
/// seeds, then backtests both.
pub fn run_ablation(data: &MarketData, cfg: &RunConfig) -> Result<AblationRun> {
    let (trend, n_trend, trend_report, split) = train_trend_stage(data, cfg)?;
    let assembler = FrameAssembler::new(cfg.features.clone(), cfg.normalization.clone())?;
    let samples = direction_dataset(data, &assembler, &trend, cfg, split)?;
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (variant, fusion) in [("attention", Fusion::Attention), ("no_attention", Fusion::Mean)] {
        let engine = train_ensemble(trend.clone(), n_trend, trend_report.clone(), split, &samples, cfg, fusion)?;
        let run = backtest_engine(data, &engine, cfg)?;
        let r = &run.report;
        rows.push(AblationRow {
            variant: variant.to_string(),
            profit_factor: r.profit_factor,
            mean_confidence: r.mean_confidence,
            trade_count: r.trade_count,
            win_rate: r.win_rate,
            final_equity: r.final_equity,
            trades_file: format!("{variant}/{TRADES_FILE}"),
        });
        runs.push(run);
    }
    Ok(AblationRun { rows, runs })
}

pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_JSON: &str = "ablation.json";

/// Full-precision table cell, so the value round-trips.
fn pf_cell(pf: ProfitFactor) -> String {
    match pf {
        ProfitFactor::Finite(v) => format!("{v}"),
        other => other.render(),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

/// Writes the table as CSV and JSON plus each variant's backtest outputs.
pub fn write_ablation(dir: &Path, ablation: &AblationRun) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let mut csv = String::from("variant,profit_factor,mean_confidence,trades,win_rate,final_equity\n");
    for (row, run) in ablation.rows.iter().zip(&ablation.runs) {
        csv.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            row.variant,
            pf_cell(row.profit_factor),
            opt(row.mean_confidence),
            row.trade_count,
            opt(row.win_rate),
            row.final_equity
        ));
        write_backtest_outputs(&dir.join(&row.variant), run)?;
    }
    let p = dir.join(ABLATION_CSV);
    std::fs::write(&p, csv).map_err(|e| CoreError::io(&p, e))?;
    let p = dir.join(ABLATION_JSON);
    std::fs::write(&p, serde_json::to_string_pretty(&ablation.rows)?).map_err(|e| CoreError::io(&p, e))
}

/// Recomputes each row's profit factor from its trades file.
pub fn verify_ablation(dir: &Path, rows: &[AblationRow]) -> Result<()> {
    for row in rows {
        let pnls = crate::backtest::read_trade_pnls(&dir.join(&row.trades_file))?;
        let pf = profit_factor_of(pnls);
        let same = match (pf, row.profit_factor) {
            (ProfitFactor::Finite(a), ProfitFactor::Finite(b)) => (a - b).abs() <= 1e-9,
            (a, b) => a == b,
        };
        if !same {
            return Err(CoreError::Invariant(format!(
                "{}: profit factor {} differs from trades ({})",
                row.variant,
                row.profit_factor.render(),
                pf.render()
            )));
        }
    }
    Ok(())
}

/// Latency over the first `latency.frames` usable backtest ticks.
pub fn run_latency(data: &MarketData, engine: &TrainedEngine, cfg: &RunConfig) -> Result<LatencyReport> {
    let mut policy = engine.policy(cfg)?;
    let ticks: Vec<Timestamp> = data
        .minute
        .iter()
        .map(|b| b.ts)
        .filter(|ts| *ts >= engine.manifest.split_ts)
        .take(cfg.latency.frames)
        .collect();
    measure_latency(
        &mut policy,
        data,
        &ticks,
        cfg.latency.repetitions,
        cfg.latency.exchange_delay,
        cfg.seed,
    )
}
