use crate::data::Bar;

/// Trailing simple moving average. Element `k` of the output is the mean of
/// `series[k..k + window]`, i.e. it is defined from input index `window − 1` on.
/// A window longer than the series (or zero) gives an empty output.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || window > series.len() {
        return Vec::new();
    }
    // compensated running sum keeps long series within 1e-12 of re-summation
    let mut out = Vec::with_capacity(series.len() + 1 - window);
    let mut sum = 0.0;
    let mut comp = 0.0;
    let add = |sum: &mut f64, comp: &mut f64, v: f64| {
        let y = v - *comp;
        let t = *sum + y;
        *comp = (t - *sum) - y;
        *sum = t;
    };
    for v in &series[..window] {
        add(&mut sum, &mut comp, *v);
    }
    out.push(sum / window as f64);
    for i in window..series.len() {
        add(&mut sum, &mut comp, series[i]);
        add(&mut sum, &mut comp, -series[i - window]);
        out.push(sum / window as f64);
    }
    out
}

/// Raw per-bar indicator channels, in this order.
pub const BAR_CHANNELS: [&str; 5] = ["ret", "volume", "sma5", "sma20", "range"];

/// Bars of history needed before the first output position.
pub const BAR_WARMUP: usize = 20;

/// Indicator rows for the last `lookback` bars of `bars`, which must hold
/// exactly `lookback + BAR_WARMUP` contiguous bars. Returned channel-major.
pub fn bar_channels(bars: &[Bar], lookback: usize) -> [Vec<f64>; 5] {
    assert_eq!(bars.len(), lookback + BAR_WARMUP, "window must include warm-up");
    let closes: Vec<f64> = bars.iter().map(|b| b.close).collect();
    let sma5 = moving_average(&closes, 5);
    let sma20 = moving_average(&closes, 20);
    let mut out: [Vec<f64>; 5] = Default::default();
    for c in out.iter_mut() {
        c.reserve(lookback);
    }
    for i in BAR_WARMUP..bars.len() {
        let b = &bars[i];
        out[0].push(b.close / bars[i - 1].close - 1.0);
        out[1].push(b.volume);
        out[2].push(sma5[i - 4] / b.close - 1.0);
        out[3].push(sma20[i - 19] / b.close - 1.0);
        out[4].push((b.high - b.low) / b.close);
    }
    out
}

/// Population standard deviation of log returns over the last `window` closes.
pub fn realized_vol(closes: &[f64], window: usize) -> Option<f64> {
    if window == 0 || closes.len() < window + 1 {
        return None;
    }
    let tail = &closes[closes.len() - window - 1..];
    let rets: Vec<f64> = tail.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    let mean = rets.iter().sum::<f64>() / rets.len() as f64;
    let var = rets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rets.len() as f64;
    Some(var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series() {
        let s = vec![3.5; 40];
        for w in [1, 5, 40] {
            assert!(moving_average(&s, w).iter().all(|v| (*v - 3.5).abs() < 1e-15));
        }
    }

    #[test]
    fn three_point_mean() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0], 3), vec![2.0]);
    }

    #[test]
    fn window_too_long_is_empty() {
        assert!(moving_average(&[1.0, 2.0], 3).is_empty());
        assert!(moving_average(&[1.0, 2.0], 0).is_empty());
    }

    #[test]
    fn flat_prices_have_zero_vol() {
        assert_eq!(realized_vol(&[10.0; 61], 60), Some(0.0));
        assert_eq!(realized_vol(&[10.0; 60], 60), None);
    }
}
