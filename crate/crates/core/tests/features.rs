use proptest::prelude::*;

use trader_core::data::{Bar, MarketData, NormalizationSpec, OrderbookSnapshot, Timeframe, Timestamp, HOUR_MS, MINUTE_MS};
use trader_core::features::{
    moving_average, orderbook_stats, resample, resample_complete, BookWindow, FeatureConfig, FrameAssembler, ResampleMode,
    BAR_WARMUP,
};
use trader_core::synth::{generate, SynthConfig};

fn synth(days: usize, seed: u64) -> MarketData {
    generate(&SynthConfig {
        days,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn daily_bar_equals_fold_over_minutes() {
    let data = synth(1, 11);
    assert_eq!(data.minute.len(), 1440);
    let day = resample_complete(&data.minute, Timeframe::Day).unwrap();
    assert_eq!(day.len(), 1);
    let d = day[0];

    let mut open = None;
    let mut high = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    let mut close = f64::NAN;
    let mut volume = 0.0;
    for b in &data.minute {
        open.get_or_insert(b.open);
        high = high.max(b.high);
        low = low.min(b.low);
        close = b.close;
        volume += b.volume;
    }
    assert_eq!(d.ts, data.minute[0].ts);
    assert_eq!(d.timeframe, Timeframe::Day);
    assert_eq!(d.open, open.unwrap());
    assert_eq!((d.high, d.low, d.close), (high, low, close));
    assert!((d.volume - volume).abs() <= 1e-9 * volume);
    assert_eq!(data.day, day);
}

#[test]
fn lenient_marks_partial_hour() {
    let data = synth(1, 12);
    let partial = &data.minute[..90];
    let out = resample(partial, Timeframe::Hour, ResampleMode::Lenient).unwrap();
    assert_eq!(out.iter().map(|r| r.complete).collect::<Vec<_>>(), vec![true, false]);
    assert_eq!(out[1].bar.close, partial[89].close);
}

fn check_resummation(series: &[f64], window: usize, tol: impl Fn(f64) -> f64) -> Result<(), TestCaseError> {
    let got = moving_average(series, window);
    if window > series.len() {
        prop_assert!(got.is_empty());
        return Ok(());
    }
    prop_assert_eq!(got.len(), series.len() - window + 1);
    for (k, v) in got.iter().enumerate() {
        let direct: f64 = series[k..k + window].iter().sum::<f64>() / window as f64;
        prop_assert!((v - direct).abs() <= tol(direct), "{} vs {}", v, direct);
    }
    Ok(())
}

proptest! {
    #[test]
    fn moving_average_matches_resummation(
        series in prop::collection::vec(-100f64..100.0, 1..400),
        window in 1usize..50,
    ) {
        check_resummation(&series, window, |_| 1e-12)?;
    }

    #[test]
    fn moving_average_of_prices_matches_resummation(
        series in prop::collection::vec(2e4f64..4e4, 1..2000),
        window in 1usize..60,
    ) {
        check_resummation(&series, window, |d| 1e-12 * d.abs())?;
    }
}

/// Brute-force statistics: every level of every snapshot, every adjacent pair.
fn scan(books: &[OrderbookSnapshot]) -> (f64, f64, f64) {
    let mut biggest = 0.0f64;
    let mut gap = 0.0f64;
    for s in books {
        for side in [&s.bids, &s.asks] {
            for i in 0..side.len() {
                biggest = biggest.max(side[i].size);
                if i + 1 < side.len() {
                    gap = gap.max((side[i + 1].price - side[i].price).abs());
                }
            }
        }
    }
    let latest = books.iter().max_by_key(|s| s.ts).unwrap();
    let bid: f64 = latest.bids.iter().map(|l| l.size).sum();
    let ask: f64 = latest.asks.iter().map(|l| l.size).sum();
    (biggest, gap, (bid - ask) / (bid + ask))
}

#[test]
fn orderbook_stats_match_full_scan() {
    let data = synth(1, 13);
    for start in [0, 300, 1000, 1380] {
        let window = &data.books[start..start + 60];
        let st = orderbook_stats(window, BookWindow::Hour).unwrap();
        let (biggest, gap, imb) = scan(window);
        assert_eq!(st.biggest_order_size, biggest);
        assert_eq!(st.max_gap, gap);
        assert!((st.bid_ask_imbalance - imb).abs() < 1e-15);

        let mut reversed = window.to_vec();
        reversed.reverse();
        assert_eq!(orderbook_stats(&reversed, BookWindow::Hour).unwrap(), st);
    }
}

fn small_features() -> FeatureConfig {
    FeatureConfig {
        lookback_minute: 30,
        lookback_hour: 12,
        lookback_day: 3,
        vol_window: 25,
        ..Default::default()
    }
}

fn identity_spec(cfg: &FeatureConfig) -> NormalizationSpec {
    let mut spec = NormalizationSpec::new();
    for f in cfg.required_features() {
        spec.set(f, 0.0, 1.0).unwrap();
    }
    spec
}

/// Bars of `tf` observable at `ts`, newest last.
fn observable(data: &MarketData, tf: Timeframe, ts: Timestamp, n: usize) -> Vec<Bar> {
    let seen: Vec<Bar> = data
        .bars(tf)
        .iter()
        .filter(|b| b.ts + tf.interval_ms() - MINUTE_MS <= ts)
        .copied()
        .collect();
    seen[seen.len() - n..].to_vec()
}

fn scripted_head(data: &MarketData, cfg: &FeatureConfig, tf: Timeframe, ts: Timestamp) -> Vec<Vec<f64>> {
    let lookback = cfg.lookback(tf);
    let bars = observable(data, tf, ts, lookback + BAR_WARMUP);
    let mean = |xs: &[Bar]| xs.iter().map(|b| b.close).sum::<f64>() / xs.len() as f64;
    let mut rows = vec![Vec::new(); 5];
    for i in BAR_WARMUP..bars.len() {
        let c = bars[i].close;
        rows[0].push(c / bars[i - 1].close - 1.0);
        rows[1].push(bars[i].volume);
        rows[2].push(mean(&bars[i - 4..=i]) / c - 1.0);
        rows[3].push(mean(&bars[i - 19..=i]) / c - 1.0);
        rows[4].push((bars[i].high - bars[i].low) / c);
    }
    let onchain = data.onchain.iter().filter(|o| o.ts <= ts).last().unwrap();
    let ctx = data.context.iter().filter(|o| o.ts <= ts).last().unwrap();
    rows.push(vec![onchain.tx_count; lookback]);
    rows.push(vec![onchain.tx_volume; lookback]);
    if tf != Timeframe::Minute {
        rows.push(vec![ctx.sp500; lookback]);
        rows.push(vec![ctx.btc_dominance; lookback]);
    }
    rows
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn frame_matches_scripted_assembly() {
    let cfg = small_features();
    let data = synth(25, 14);
    let asm = FrameAssembler::new(cfg.clone(), identity_spec(&cfg)).unwrap();
    let last = data.minute.last().unwrap().ts;
    let ticks = [last, last - 3 * HOUR_MS - MINUTE_MS, last - 17 * HOUR_MS - 23 * MINUTE_MS, last - 26 * HOUR_MS];

    for ts in ticks {
        let frame = asm.assemble(&data, ts).unwrap();
        for tf in Timeframe::ALL {
            let want = scripted_head(&data, &cfg, tf, ts);
            let t = frame.head(tf);
            assert_eq!(t.shape(), &[want.len(), cfg.lookback(tf)][..]);
            let names = cfg.channels(tf);
            for (c, row) in want.iter().enumerate() {
                let got = &t.values()[c * row.len()..(c + 1) * row.len()];
                for (g, w) in got.iter().zip(row) {
                    assert!(close(*g, *w), "{} at {ts}: {g} vs {w}", names[c]);
                }
            }
        }

        let hour_books: Vec<OrderbookSnapshot> =
            data.books.iter().filter(|b| b.ts <= ts && b.ts > ts - HOUR_MS).cloned().collect();
        let minute_books: Vec<OrderbookSnapshot> = hour_books.iter().filter(|b| b.ts > ts - MINUTE_MS).cloned().collect();
        let latest = hour_books.last().unwrap();
        let mid = (latest.bids[0].price + latest.asks[0].price) / 2.0;
        let mut book = Vec::new();
        for w in [&minute_books, &hour_books] {
            let (biggest, gap, imb) = scan(w);
            book.extend([biggest, gap / mid * 1e4, imb]);
        }
        book.push((latest.asks[0].price - latest.bids[0].price) / mid * 1e4);
        book.extend(latest.bids[..cfg.book_levels].iter().map(|l| l.size));
        book.extend(latest.asks[..cfg.book_levels].iter().map(|l| l.size));
        assert_eq!(frame.orderbook.len(), book.len());
        for (i, (g, w)) in frame.orderbook.iter().zip(&book).enumerate() {
            assert!(close(*g, *w), "{} at {ts}: {g} vs {w}", cfg.orderbook_fields()[i]);
        }

        let sentiment: Vec<f64> = data.sentiment.iter().filter(|p| p.ts <= ts).map(|p| p.score).collect();
        assert_eq!(frame.sentiment, sentiment[sentiment.len() - 10..]);

        let closes: Vec<f64> = observable(&data, Timeframe::Minute, ts, cfg.vol_window + 1)
            .iter()
            .map(|b| b.close)
            .collect();
        let rets: Vec<f64> = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        let m = rets.iter().sum::<f64>() / rets.len() as f64;
        let vol = (rets.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / rets.len() as f64).sqrt();
        assert!(close(frame.realized_vol, vol));
        assert_eq!(frame.close, data.minute_bar_at(ts).unwrap().close);
    }
}

#[test]
fn constant_inputs_at_centers_give_zero_heads() {
    let cfg = small_features();
    let mut data = synth(25, 15);
    for tf in Timeframe::ALL {
        for b in data.bars_mut(tf) {
            b.open = 100.0;
            b.high = 100.0;
            b.low = 100.0;
            b.close = 100.0;
            b.volume = 7.0;
        }
    }
    let mut spec = identity_spec(&cfg);
    for tf in Timeframe::ALL {
        spec.set(format!("{}.volume", tf.as_str()), 7.0, 1.0).unwrap();
    }
    let ts = data.minute.last().unwrap().ts;
    let o = data.onchain.iter().filter(|o| o.ts <= ts).last().unwrap();
    let c = data.context.iter().filter(|o| o.ts <= ts).last().unwrap();
    spec.set("onchain.tx_count", o.tx_count, 1.0).unwrap();
    spec.set("onchain.tx_volume", o.tx_volume, 1.0).unwrap();
    spec.set("context.sp500", c.sp500, 1.0).unwrap();
    spec.set("context.btc_dominance", c.btc_dominance, 1.0).unwrap();
    let frame = FrameAssembler::new(cfg, spec).unwrap().assemble(&data, ts).unwrap();
    for tf in Timeframe::ALL {
        assert!(frame.head(tf).values().iter().all(|v| *v == 0.0), "{}", tf.as_str());
    }
}
