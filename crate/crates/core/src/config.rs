//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and has a
//! default; unknown and repeated keys are errors. Relative paths resolve
//! against the directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::backtest::{BacktestConfig, ExchangeDelay};
use crate::data::{DataPaths, FaultConfig, NormalizationSpec, PayloadKind, SeriesKind, MINUTE_MS};
use crate::direction::{DirectionModelConfig, DirectionTrainConfig, Fusion, Preset};
use crate::engine::{ThresholdConfig, DEFAULT_T_BEAR, DEFAULT_T_BULL};
use crate::error::{CoreError, Result};
use crate::features::{default_normalization, FeatureConfig};
use crate::par::Parallelism;
use crate::synth::SynthConfig;
use crate::trend::TrendConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub preset: Preset,
    pub fusion: Fusion,
    pub lambda_l2: f64,
    pub models_per_regime: usize,
    /// Regimes with fewer training samples reuse the models trained on all samples.
    pub min_regime_samples: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            fusion: Fusion::Attention,
            lambda_l2: 1e-4,
            models_per_regime: 3,
            min_regime_samples: 500,
        }
    }
}

impl ModelSettings {
    pub fn direction_config(&self, features: &FeatureConfig) -> DirectionModelConfig {
        let mut cfg = match self.preset {
            Preset::PaperScale => DirectionModelConfig::paper_scale(features),
            Preset::Desk | Preset::Custom => DirectionModelConfig::desk(features),
        };
        cfg.fusion = self.fusion;
        cfg.lambda_l2 = self.lambda_l2;
        cfg
    }
}

/// How direction-training samples are drawn and labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelConfig {
    /// Forward window (minutes) of the label, measured from the fill tick.
    pub horizon_minutes: usize,
    /// Absolute forward returns at or below this are labelled hold.
    pub hold_band: f64,
    pub sample_stride_minutes: usize,
    pub max_samples: usize,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            horizon_minutes: 15,
            hold_band: 0.01,
            sample_stride_minutes: 3,
            max_samples: 6_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencySettings {
    pub exchange_delay: ExchangeDelay,
    pub repetitions: usize,
    pub frames: usize,
}

impl Default for LatencySettings {
    fn default() -> Self {
        Self {
            exchange_delay: ExchangeDelay {
                mean_ms: 100.0,
                jitter_ms: 0.0,
            },
            repetitions: 5,
            frames: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataPaths,
    /// Share of the minute-data span used for training; the rest is backtested.
    pub train_fraction: f64,
    pub features: FeatureConfig,
    pub normalization: NormalizationSpec,
    pub model: ModelSettings,
    pub direction_train: DirectionTrainConfig,
    pub labels: LabelConfig,
    pub trend: TrendConfig,
    pub trend_sample_stride_minutes: usize,
    pub thresholds: ThresholdConfig,
    pub t_bear: f64,
    pub t_bull: f64,
    pub backtest: BacktestConfig,
    /// Accepted for completeness; a single instrument has no cross exposure to limit.
    pub correlation_limit: Option<f64>,
    pub feed: FaultConfig,
    /// Feed fault seed; defaults to `seed`.
    pub feed_seed: Option<u64>,
    pub synth: SynthConfig,
    pub latency: LatencySettings,
    pub baseline_entry_prob: f64,
    pub parallelism: Parallelism,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataPaths::in_dir(Path::new("data")),
            train_fraction: 0.6,
            features: FeatureConfig::default(),
            normalization: default_normalization(),
            model: ModelSettings::default(),
            direction_train: DirectionTrainConfig::default(),
            labels: LabelConfig::default(),
            trend: TrendConfig::default(),
            trend_sample_stride_minutes: 60,
            thresholds: ThresholdConfig::default(),
            t_bear: DEFAULT_T_BEAR,
            t_bull: DEFAULT_T_BULL,
            backtest: BacktestConfig::default(),
            correlation_limit: None,
            feed: FaultConfig::default(),
            feed_seed: None,
            synth: SynthConfig::default(),
            latency: LatencySettings::default(),
            baseline_entry_prob: 0.05,
            parallelism: Parallelism::default(),
        }
    }
}

/// Raw entries with their line numbers; consumed key by key.
struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CoreError::Config(format!("line {}: expected `key = value`", i + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(CoreError::Config(format!("line {}: empty key", i + 1)));
            }
            if map.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
                return Err(CoreError::Config(format!("line {}: repeated key `{k}`", i + 1)));
            }
        }
        Ok(Self { map })
    }

    fn take<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((line, v)) = self.map.remove(key) {
            *slot = v
                .parse()
                .map_err(|e| CoreError::Config(format!("line {line}: `{key}`: {e}")))?;
        }
        Ok(())
    }

    fn take_opt<T: FromStr>(&mut self, key: &str, slot: &mut Option<T>) -> Result<()>
    where
        T::Err: std::fmt::Display,
    {
        if let Some((line, v)) = self.map.remove(key) {
            *slot = if v == "none" {
                None
            } else {
                Some(
                    v.parse()
                        .map_err(|e| CoreError::Config(format!("line {line}: `{key}`: {e}")))?,
                )
            };
        }
        Ok(())
    }

    fn take_with<T>(&mut self, key: &str, slot: &mut T, f: impl Fn(&str) -> Option<T>) -> Result<()> {
        if let Some((line, v)) = self.map.remove(key) {
            *slot = f(&v).ok_or_else(|| CoreError::Config(format!("line {line}: `{key}`: bad value `{v}`")))?;
        }
        Ok(())
    }

    fn take_prefix(&mut self, prefix: &str) -> Vec<(String, usize, String)> {
        let keys: Vec<String> = self.map.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        keys.into_iter()
            .map(|k| {
                let (line, v) = self.map.remove(&k).expect("listed key");
                (k[prefix.len()..].to_string(), line, v)
            })
            .collect()
    }
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = PathBuf::from(p);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut e = Entries::parse(text)?;
        let mut c = RunConfig::default();

        e.take("seed", &mut c.seed)?;
        let mut data_dir = String::from("data");
        e.take("data.dir", &mut data_dir)?;
        c.data = DataPaths::in_dir(&resolve(base_dir, &data_dir));
        for kind in SeriesKind::ALL {
            let mut p = String::new();
            e.take(&format!("data.{}", kind.name()), &mut p)?;
            if !p.is_empty() {
                let slot = match kind {
                    SeriesKind::Bars => &mut c.data.bars,
                    SeriesKind::Book => &mut c.data.book,
                    SeriesKind::Sentiment => &mut c.data.sentiment,
                    SeriesKind::OnChain => &mut c.data.onchain,
                    SeriesKind::Context => &mut c.data.context,
                };
                *slot = resolve(base_dir, &p);
            }
        }
        e.take("data.train_fraction", &mut c.train_fraction)?;

        let f = &mut c.features;
        e.take("features.lookback_minute", &mut f.lookback_minute)?;
        e.take("features.lookback_hour", &mut f.lookback_hour)?;
        e.take("features.lookback_day", &mut f.lookback_day)?;
        e.take("features.book_levels", &mut f.book_levels)?;
        e.take("features.vol_window", &mut f.vol_window)?;
        let mut secs = f.book_interval_ms / 1000;
        e.take("features.book_interval_seconds", &mut secs)?;
        f.book_interval_ms = secs * 1000;
        let mut mins = f.onchain_max_age_ms / MINUTE_MS;
        e.take("features.onchain_max_age_minutes", &mut mins)?;
        f.onchain_max_age_ms = mins * MINUTE_MS;
        let mut mins = f.context_max_age_ms / MINUTE_MS;
        e.take("features.context_max_age_minutes", &mut mins)?;
        f.context_max_age_ms = mins * MINUTE_MS;

        for (feature, line, v) in e.take_prefix("norm.") {
            let parts: Vec<&str> = v.split(',').map(str::trim).collect();
            let parsed = match parts.as_slice() {
                [a, b] => a.parse::<f64>().ok().zip(b.parse::<f64>().ok()),
                _ => None,
            };
            let (center, scale) =
                parsed.ok_or_else(|| CoreError::Config(format!("line {line}: `norm.{feature}` needs `center, scale`")))?;
            c.normalization
                .set(feature.clone(), center, scale)
                .map_err(|err| CoreError::Config(format!("line {line}: {err}")))?;
        }

        let m = &mut c.model;
        e.take_with("model.preset", &mut m.preset, |v| match v {
            "desk" => Some(Preset::Desk),
            "paper-scale" | "paper_scale" => Some(Preset::PaperScale),
            _ => None,
        })?;
        e.take_with("model.fusion", &mut m.fusion, |v| match v {
            "attention" => Some(Fusion::Attention),
            "mean" | "none" => Some(Fusion::Mean),
            _ => None,
        })?;
        e.take("model.lambda_l2", &mut m.lambda_l2)?;
        e.take("model.per_regime", &mut m.models_per_regime)?;
        e.take("model.min_regime_samples", &mut m.min_regime_samples)?;

        let t = &mut c.direction_train;
        e.take("train.epochs", &mut t.epochs)?;
        e.take("train.batch_size", &mut t.batch_size)?;
        e.take("train.learning_rate", &mut t.learning_rate)?;
        e.take("train.momentum", &mut t.momentum)?;
        e.take("train.validation_fraction", &mut t.validation_fraction)?;
        e.take("train.keep_best", &mut t.keep_best)?;
        let l = &mut c.labels;
        e.take("labels.horizon_minutes", &mut l.horizon_minutes)?;
        e.take("labels.hold_band", &mut l.hold_band)?;
        e.take("train.sample_stride_minutes", &mut l.sample_stride_minutes)?;
        e.take("train.max_samples", &mut l.max_samples)?;

        let tr = &mut c.trend;
        e.take("trend.epochs", &mut tr.epochs)?;
        e.take("trend.learning_rate", &mut tr.learning_rate)?;
        e.take("trend.momentum", &mut tr.momentum)?;
        e.take("trend.batch_size", &mut tr.batch_size)?;
        e.take("trend.lambda_l2", &mut tr.lambda_l2)?;
        e.take("trend.label_horizon_minutes", &mut tr.label_horizon_minutes)?;
        e.take("trend.label_scale", &mut tr.label_scale)?;
        e.take("trend.sample_stride_minutes", &mut c.trend_sample_stride_minutes)?;

        let th = &mut c.thresholds;
        e.take("engine.threshold_high", &mut th.threshold_high)?;
        e.take("engine.threshold_low", &mut th.threshold_low)?;
        e.take("engine.size_large", &mut th.size_large)?;
        e.take("engine.size_small", &mut th.size_small)?;
        e.take("engine.t_bear", &mut c.t_bear)?;
        e.take("engine.t_bull", &mut c.t_bull)?;

        let b = &mut c.backtest;
        e.take("exec.fee_rate", &mut b.fee_rate)?;
        e.take("exec.slippage_bps_mean", &mut b.slippage_bps_mean)?;
        e.take("exec.profit_target", &mut b.limits.profit_target)?;
        e.take("exec.stop", &mut b.limits.stop)?;
        e.take("exec.exit_on_opposing", &mut b.exit_on_opposing)?;
        e.take("exec.initial_equity", &mut b.initial_equity)?;
        e.take("exec.periods_per_year", &mut b.periods_per_year)?;
        e.take("risk.max_position_fraction", &mut b.limits.max_position_fraction)?;
        e.take("risk.max_drawdown_halt", &mut b.limits.max_drawdown_halt)?;
        e.take_opt("risk.correlation_limit", &mut c.correlation_limit)?;

        e.take_opt("feed.seed", &mut c.feed_seed)?;
        let fd = &mut c.feed;
        e.take("feed.drop_prob", &mut fd.drop_prob)?;
        for (i, kind) in PayloadKind::ALL.iter().enumerate() {
            e.take_opt(&format!("feed.drop_prob.{}", kind.name()), &mut fd.drop_prob_by_kind[i])?;
        }
        e.take("feed.lag_ms_mean", &mut fd.lag_ms_mean)?;
        e.take("feed.lag_ms_std", &mut fd.lag_ms_std)?;
        e.take_opt("feed.fail_after", &mut fd.fail_after)?;

        let s = &mut c.synth;
        e.take("synth.days", &mut s.days)?;
        e.take("synth.start_ts", &mut s.start_ts)?;
        e.take("synth.signal_strength", &mut s.signal_strength)?;
        e.take("synth.max_coupling", &mut s.max_coupling)?;
        e.take("synth.signal_persistence", &mut s.signal_persistence)?;
        e.take("synth.signal_lag_minutes", &mut s.signal_lag_minutes)?;
        e.take("synth.minute_vol", &mut s.minute_vol)?;
        e.take("synth.start_price", &mut s.start_price)?;
        e.take("synth.book_levels", &mut s.book_levels)?;
        e.take("synth.imbalance_sensitivity", &mut s.imbalance_sensitivity)?;

        let lt = &mut c.latency;
        e.take("latency.exchange_delay_ms", &mut lt.exchange_delay.mean_ms)?;
        e.take("latency.exchange_jitter_ms", &mut lt.exchange_delay.jitter_ms)?;
        e.take("latency.repetitions", &mut lt.repetitions)?;
        e.take("latency.frames", &mut lt.frames)?;

        e.take("baseline.entry_prob", &mut c.baseline_entry_prob)?;
        e.take_with("parallelism", &mut c.parallelism, Parallelism::parse)?;

        if let Some((k, (line, _))) = e.map.iter().next() {
            return Err(CoreError::Config(format!("line {line}: unknown key `{k}`")));
        }
        c.set_seed(c.seed);
        c.validate()?;
        Ok(c)
    }

    /// Applies the single top-level seed to every stage.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.trend.seed = seed;
        self.direction_train.seed = seed;
        self.backtest.seed = seed;
        self.feed.seed = self.feed_seed.unwrap_or(seed);
        self.direction_train.parallelism = self.parallelism;
    }

    /// Cross-field checks run before any work starts.
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CoreError::Config("data.train_fraction must be in (0, 1)".into()));
        }
        self.features.validate()?;
        self.trend.validate()?;
        self.direction_train.validate()?;
        self.backtest.validate()?;
        self.thresholds.validate(self.backtest.limits.max_position_fraction)?;
        self.feed.validate()?;
        self.synth.validate()?;
        if !(-1.0 <= self.t_bear && self.t_bear < self.t_bull && self.t_bull <= 1.0) {
            return Err(CoreError::Config("need -1 <= engine.t_bear < engine.t_bull <= 1".into()));
        }
        if self.model.models_per_regime == 0 {
            return Err(CoreError::Config("model.per_regime must be >= 1".into()));
        }
        if self.labels.horizon_minutes == 0 || self.labels.sample_stride_minutes == 0 || self.labels.max_samples == 0 {
            return Err(CoreError::Config("label horizon, stride and max samples must be >= 1".into()));
        }
        if !(self.labels.hold_band >= 0.0) {
            return Err(CoreError::Config("labels.hold_band must be >= 0".into()));
        }
        if self.trend_sample_stride_minutes == 0 {
            return Err(CoreError::Config("trend.sample_stride_minutes must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline_entry_prob) {
            return Err(CoreError::Config("baseline.entry_prob must be in [0, 1]".into()));
        }
        if let Some(l) = self.correlation_limit {
            if !(l > 0.0 && l <= 1.0) {
                return Err(CoreError::Config("risk.correlation_limit must be in (0, 1]".into()));
            }
        }
        if self.latency.repetitions == 0 || self.latency.frames == 0 {
            return Err(CoreError::Config("latency repetitions and frames must be >= 1".into()));
        }
        crate::features::FrameAssembler::new(self.features.clone(), self.normalization.clone())?;
        for name in crate::trend::TREND_FEATURES {
            if !self.normalization.contains(name) {
                return Err(CoreError::Config(format!("normalization spec lacks `{name}`")));
            }
        }
        Ok(())
    }

    /// Every input file must exist before data-reading commands start.
    pub fn check_data_files(&self) -> Result<()> {
        for kind in SeriesKind::ALL {
            let p = self.data.get(kind);
            if !p.is_file() {
                return Err(CoreError::MissingArtifact(p.to_path_buf()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = RunConfig::parse("# nothing\n\n", Path::new("/x")).unwrap();
        assert_eq!(c.thresholds, ThresholdConfig::default());
        assert_eq!(c.data.bars, Path::new("/x/data/bars.csv"));
    }

    #[test]
    fn keys_are_applied() {
        let text = "seed = 9\nengine.threshold_high = 0.8  # comment\nnorm.book.spread = 1.5, 0.5\nfeed.fail_after = 10\n";
        let c = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.backtest.seed, 9);
        assert_eq!(c.thresholds.threshold_high, 0.8);
        assert_eq!(c.normalization.get("book.spread"), Some((1.5, 0.5)));
        assert_eq!(c.feed.fail_after, Some(10));
        assert_eq!(c.feed.seed, 9);
        let c = RunConfig::parse("seed = 9\nfeed.seed = 4\n", Path::new(".")).unwrap();
        assert_eq!((c.feed.seed, c.synth.seed), (4, 9));
    }

    #[test]
    fn rejects_unknown_repeated_and_inconsistent() {
        assert!(RunConfig::parse("bogus = 1", Path::new(".")).is_err());
        assert!(RunConfig::parse("seed = 1\nseed = 2", Path::new(".")).is_err());
        assert!(RunConfig::parse("seed = x", Path::new(".")).is_err());
        assert!(RunConfig::parse("engine.threshold_low = 0.9", Path::new(".")).is_err());
        assert!(RunConfig::parse("norm.book.spread = 1, 0", Path::new(".")).is_err());
        assert!(RunConfig::parse("no equals sign", Path::new(".")).is_err());
    }
}
