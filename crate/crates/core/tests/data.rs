use std::collections::BTreeSet;

use proptest::prelude::*;

use trader_core::data::io::write_bars;
use trader_core::data::{
    collect_frames, detect_gaps, load_series, missing_count, FaultConfig, FeedFrame, MarketData, PayloadKind, ReplayFeed,
    SeriesData, SeriesKind, SimulatedLiveFeed, MINUTE_MS,
};
use trader_core::synth::{generate, imbalance_return_correlation, SynthConfig};

fn synth(days: usize, seed: u64, strength: f64) -> MarketData {
    generate(&SynthConfig {
        days,
        seed,
        signal_strength: strength,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn day_of_minute_bars_loads_back() {
    let data = synth(1, 21, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bars.csv");
    write_bars(&path, &data.minute).unwrap();
    let SeriesData::Bars(bars) = load_series(&path, SeriesKind::Bars).unwrap() else {
        panic!("bars expected");
    };
    assert_eq!(bars.len(), 1440);
    assert_eq!(bars.first().unwrap().ts, data.minute[0].ts);
    assert_eq!(bars.last().unwrap().ts, data.minute[1439].ts);
    assert_eq!(bars, data.minute);
}

#[test]
fn written_dataset_reloads_identically() {
    let data = synth(2, 22, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let paths = data.write(dir.path()).unwrap();
    let back = MarketData::load(&paths).unwrap();
    assert_eq!(back.minute, data.minute);
    assert_eq!(back.hour, data.hour);
    assert_eq!(back.day, data.day);
    assert_eq!(back.sentiment, data.sentiment);
    assert_eq!(back.onchain, data.onchain);
    assert_eq!(back.context, data.context);
    for (a, b) in back.books.iter().zip(&data.books) {
        assert_eq!(a, b);
    }
    assert_eq!(back.books.len(), data.books.len());
}

proptest! {
    #[test]
    fn gaps_match_missing_grid_points(
        len in 2usize..300,
        holes in prop::collection::btree_set(1usize..299, 0..40),
    ) {
        let holes: BTreeSet<usize> = holes.into_iter().filter(|h| *h < len - 1).collect();
        let ts: Vec<i64> = (0..len).filter(|i| !holes.contains(i)).map(|i| i as i64 * MINUTE_MS).collect();
        let gaps = detect_gaps(&ts, MINUTE_MS);
        prop_assert_eq!(missing_count(&gaps, MINUTE_MS), holes.len());

        let mut runs: Vec<(i64, i64)> = Vec::new();
        for h in &holes {
            let t = *h as i64 * MINUTE_MS;
            match runs.last_mut() {
                Some(r) if r.1 + MINUTE_MS == t => r.1 = t,
                _ => runs.push((t, t)),
            }
        }
        prop_assert_eq!(gaps, runs);
    }
}

fn frames(data: &MarketData, cfg: FaultConfig) -> Vec<FeedFrame> {
    let mut feed = SimulatedLiveFeed::new(ReplayFeed::new(data), cfg).unwrap();
    collect_frames(&mut feed).unwrap()
}

#[test]
fn feed_faults_are_seeded() {
    let data = synth(1, 23, 0.5);
    let replay = collect_frames(&mut ReplayFeed::new(&data)).unwrap();
    assert!(replay.windows(2).all(|w| w[0].ts <= w[1].ts));
    assert_eq!(frames(&data, FaultConfig::default()), replay);

    let noisy = FaultConfig {
        drop_prob: 0.1,
        lag_ms_mean: 200.0,
        lag_ms_std: 50.0,
        seed: 3,
        ..Default::default()
    };
    let a = frames(&data, noisy.clone());
    assert_eq!(a, frames(&data, noisy.clone()));
    let bars = |f: &[FeedFrame]| f.iter().filter(|x| x.bar.is_some()).count();
    let dropped = bars(&replay) - bars(&a);
    assert!(dropped > 0 && (dropped as f64) < 0.2 * bars(&replay) as f64, "{dropped}");
    assert_ne!(a, frames(&data, FaultConfig { seed: 4, ..noisy }));

    let mut no_books = FaultConfig::default();
    no_books.drop_prob_by_kind[PayloadKind::ALL.iter().position(|k| *k == PayloadKind::Book).unwrap()] = Some(1.0);
    let f = frames(&data, no_books);
    assert!(f.iter().all(|x| x.book.is_none()));
    assert_eq!(bars(&f), bars(&replay));
}

#[test]
fn feed_disconnect_is_an_error() {
    let data = synth(1, 24, 0.5);
    let cfg = FaultConfig {
        fail_after: Some(100),
        ..Default::default()
    };
    let mut feed = SimulatedLiveFeed::new(ReplayFeed::new(&data), cfg).unwrap();
    assert!(collect_frames(&mut feed).is_err());
}

#[test]
fn null_signal_is_uncorrelated() {
    let data = synth(40, 25, 0.0);
    assert!(data.books.len() >= 50_000);
    let c = imbalance_return_correlation(&data, 5).unwrap();
    assert!(c.abs() <= 0.03, "{c}");
}

#[test]
fn full_signal_is_correlated() {
    let data = synth(40, 26, 1.0);
    let c = imbalance_return_correlation(&data, 5).unwrap();
    assert!(c > 0.5, "{c}");
}

#[test]
fn synth_seed_changes_output() {
    assert_eq!(synth(1, 1, 0.5), synth(1, 1, 0.5));
    assert_ne!(synth(1, 1, 0.5).minute, synth(1, 2, 0.5).minute);
}
