//! `trader`: data generation and validation, training, backtesting, the
//! fusion ablation, latency measurement and report rendering.
//!
//! Exit codes: 0 success, 2 validation findings, 3 I/O or parse failure,
//! 4 missing prerequisite, 5 internal invariant failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trader_core::backtest::{read_report_json, BacktestReport, LatencyReport};
use trader_core::config::RunConfig;
use trader_core::data::{
    detect_gaps, load_series, missing_count, MarketData, SeriesData, SeriesKind, Timeframe, Timestamp, HOUR_MS,
    SENTIMENT_INTERVAL_MS,
};
use trader_core::pipeline::{self, TrainedEngine};
use trader_core::synth::{imbalance_return_correlation, write_synth};
use trader_core::trend::write_trend_csv;
use trader_core::CoreError;

#[derive(Parser)]
#[command(name = "trader", version, about = "Two-stage trend/direction trading pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: `out` next to the config file].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load every input file, check record invariants and report gaps.
    Validate(Common),
    /// Write a synthetic dataset with a planted orderbook signal into --out.
    Synth(Common),
    /// Train the trend network and the direction ensemble.
    Train(Common),
    /// Backtest trained artifacts over the held-out span.
    Backtest(Common),
    /// Compare attention fusion against mean fusion.
    Ablation(Common),
    /// Time each engine stage on trained artifacts.
    Latency(Common),
    /// Summarize an existing report.json.
    Report(Common),
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::Config(_) => 2,
            CoreError::Load(_) | CoreError::Io { .. } | CoreError::Json(_) => 3,
            CoreError::MissingArtifact(_) => 4,
            _ => 5,
        };
        Self::new(code, e.to_string())
    }
}

type Outcome = Result<u8, Failure>;

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

fn load_ctx(c: &Common) -> Result<Ctx, Failure> {
    if !c.config.is_file() {
        return Err(Failure::new(3, format!("cannot read config {}", c.config.display())));
    }
    let mut cfg = RunConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    let out = c.out.clone().unwrap_or_else(|| {
        c.config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
            .join("out")
    });
    std::fs::create_dir_all(&out).map_err(|e| Failure::new(3, format!("{}: {e}", out.display())))?;
    Ok(Ctx { cfg, out })
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::new(3, format!("{}: {e}", path.display())))
}

fn load_market(cfg: &RunConfig) -> Result<MarketData, Failure> {
    cfg.check_data_files()?;
    Ok(MarketData::load(&cfg.data)?)
}

fn fmt_ts_range(a: Timestamp, b: Timestamp) -> String {
    if a == b {
        format!("{a}")
    } else {
        format!("{a}..{b}")
    }
}

fn validate(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let cfg = &ctx.cfg;
    let mut out = String::new();
    let mut total_gaps = 0usize;
    for kind in SeriesKind::ALL {
        let path = cfg.data.get(kind);
        let series = load_series(path, kind).map_err(|e| Failure::new(3, e.to_string()))?;
        let groups: Vec<(String, Vec<Timestamp>, i64)> = match &series {
            SeriesData::Bars(bars) => Timeframe::ALL
                .iter()
                .map(|tf| {
                    let ts = bars.iter().filter(|b| b.timeframe == *tf).map(|b| b.ts).collect();
                    (format!("bars.{}", tf.as_str()), ts, tf.interval_ms())
                })
                .collect(),
            SeriesData::Book(_) => vec![(kind.name().into(), series.timestamps(), cfg.features.book_interval_ms)],
            SeriesData::Sentiment(_) => vec![(kind.name().into(), series.timestamps(), SENTIMENT_INTERVAL_MS)],
            SeriesData::OnChain(_) | SeriesData::Context(_) => vec![(kind.name().into(), series.timestamps(), HOUR_MS)],
        };
        for (name, ts, interval) in groups {
            let gaps = detect_gaps(&ts, interval);
            total_gaps += gaps.len();
            let _ = writeln!(
                out,
                "{name}: {} records, {} gaps ({} missing)",
                ts.len(),
                gaps.len(),
                missing_count(&gaps, interval)
            );
            for (a, b) in gaps {
                let _ = writeln!(out, "  gap {}", fmt_ts_range(a, b));
            }
        }
    }
    let _ = writeln!(out, "total: {total_gaps} gaps");
    print!("{out}");
    write_file(&ctx.out.join("validation.txt"), &out)?;
    Ok(if total_gaps == 0 { 0 } else { 2 })
}

fn synth(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let (data, paths) = write_synth(&ctx.cfg.synth, &ctx.out)?;
    println!(
        "wrote {} minute bars, {} snapshots to {}",
        data.minute.len(),
        data.books.len(),
        paths.bars.parent().unwrap_or(&ctx.out).display()
    );
    for h in [1usize, 5, 15] {
        if let Some(r) = imbalance_return_correlation(&data, h) {
            println!("imbalance vs {h}-minute forward return: correlation {r:.4}");
        }
    }
    Ok(0)
}

fn train(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let data = load_market(&ctx.cfg)?;
    let engine = pipeline::train_engine(&data, &ctx.cfg)?;
    engine.save(&ctx.out)?;

    let scores = pipeline::hourly_trend_scores(&data, &engine.trend, &ctx.cfg);
    write_trend_csv(&ctx.out.join("trend.csv"), &scores)?;

    let m = &engine.manifest;
    println!(
        "trend: {} samples, final mse {:.5}",
        m.trend_samples, m.trend_report.final_loss
    );
    println!(
        "direction: {} samples (buy {}, sell {}, hold {}), {} networks",
        m.direction_samples,
        m.label_counts[0],
        m.label_counts[1],
        m.label_counts[2],
        m.models.len()
    );
    for e in &m.models {
        let f = e.report.final_metrics();
        println!(
            "  {} ({} samples): epoch {} train acc {:.3} val acc {}",
            e.file,
            e.samples,
            e.report.selected_epoch,
            f.train_accuracy,
            f.validation_accuracy.map_or("n/a".into(), |v| format!("{v:.3}"))
        );
    }
    println!("artifacts in {}", ctx.out.display());
    Ok(0)
}

fn backtest(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let engine = TrainedEngine::load(&ctx.out, &ctx.cfg)?;
    let data = load_market(&ctx.cfg)?;
    let run = pipeline::backtest_engine(&data, &engine, &ctx.cfg)?;
    pipeline::write_backtest_outputs(&ctx.out, &run)?;
    print!("{}", summary(&run.report));
    println!("report hash {}", run.report.hash());
    Ok(0)
}

fn ablation(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let data = load_market(&ctx.cfg)?;
    let ab = pipeline::run_ablation(&data, &ctx.cfg)?;
    let dir = ctx.out.join("ablation");
    pipeline::write_ablation(&dir, &ab)?;
    pipeline::verify_ablation(&dir, &ab.rows)?;
    println!("{:<14} {:>14} {:>16} {:>8} {:>9}", "variant", "profit_factor", "mean_confidence", "trades", "win_rate");
    for r in &ab.rows {
        println!(
            "{:<14} {:>14} {:>16} {:>8} {:>9}",
            r.variant,
            r.profit_factor.render(),
            r.mean_confidence.map_or("n/a".into(), |v| format!("{v:.4}")),
            r.trade_count,
            r.win_rate.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(0)
}

fn latency_table(r: &LatencyReport) -> String {
    let mut s = format!(
        "{} frames x {} repetitions, exchange delay {} ms (jitter {} ms)\n",
        r.frames, r.repetitions, r.exchange_delay.mean_ms, r.exchange_delay.jitter_ms
    );
    let _ = writeln!(s, "{:<12} {:>10} {:>10} {:>10} {:>10}", "stage", "mean_ms", "p50_ms", "p99_ms", "max_ms");
    for (name, p) in &r.stages {
        let _ = writeln!(
            s,
            "{name:<12} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
            p.mean_ms, p.p50_ms, p.p99_ms, p.max_ms
        );
    }
    s
}

fn latency(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let engine = TrainedEngine::load(&ctx.out, &ctx.cfg)?;
    let data = load_market(&ctx.cfg)?;
    let report = pipeline::run_latency(&data, &engine, &ctx.cfg)?;
    let table = latency_table(&report);
    print!("{table}");
    write_file(&ctx.out.join("latency.txt"), &table)?;
    write_file(
        &ctx.out.join("latency.json"),
        &serde_json::to_string_pretty(&report).map_err(|e| Failure::new(5, e.to_string()))?,
    )?;
    Ok(0)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

fn summary(r: &BacktestReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ticks:          {}", r.ticks);
    let _ = writeln!(s, "trades:         {}", r.trade_count);
    let _ = writeln!(s, "profit factor:  {}", r.profit_factor.render());
    let _ = writeln!(s, "win rate:       {}", opt(r.win_rate, 6));
    let _ = writeln!(s, "initial equity: {:.2}", r.initial_equity);
    let _ = writeln!(s, "final equity:   {:.2}", r.final_equity);
    let _ = writeln!(s, "sharpe:         {}", opt(r.sharpe, 4));
    let _ = writeln!(s, "max drawdown:   {:.6}", r.max_drawdown);
    let _ = writeln!(s, "mean confidence: {}", opt(r.mean_confidence, 6));
    let _ = writeln!(s, "risk halts:     {}", r.halt_events.len());
    if let Some(t) = &r.truncated {
        let _ = writeln!(s, "truncated:      {t}");
    }
    for (k, v) in &r.action_counts {
        let _ = writeln!(s, "action {k}: {v}");
    }
    for (k, v) in &r.no_action_reasons {
        let _ = writeln!(s, "no-action {k}: {v}");
    }
    s
}

fn report(c: &Common) -> Outcome {
    let ctx = load_ctx(c)?;
    let r = read_report_json(&ctx.out.join(pipeline::REPORT_FILE))?;
    r.check_consistency()?;
    let text = summary(&r);
    print!("{text}");
    write_file(&ctx.out.join("summary.txt"), &text)?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate(c) => validate(c),
        Command::Synth(c) => synth(c),
        Command::Train(c) => train(c),
        Command::Backtest(c) => backtest(c),
        Command::Ablation(c) => ablation(c),
        Command::Latency(c) => latency(c),
        Command::Report(c) => report(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
