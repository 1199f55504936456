use serde::{Deserialize, Serialize};

use crate::data::OrderbookSnapshot;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BookWindow {
    Minute,
    Hour,
}

/// Running statistics over the snapshots of one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderbookStats {
    pub window: BookWindow,
    /// Largest single level size seen on either side.
    pub biggest_order_size: f64,
    /// Largest price distance between adjacent levels of the same side.
    pub max_gap: f64,
    /// `(Σbid − Σask) / (Σbid + Σask)` on the latest snapshot.
    pub bid_ask_imbalance: f64,
}

pub fn imbalance(snapshot: &OrderbookSnapshot) -> f64 {
    let bid: f64 = snapshot.bids.iter().map(|l| l.size).sum();
    let ask: f64 = snapshot.asks.iter().map(|l| l.size).sum();
    if bid + ask > 0.0 {
        (bid - ask) / (bid + ask)
    } else {
        0.0
    }
}

/// Statistics over `snapshots`. Max-based fields do not depend on order; the
/// imbalance is taken from the snapshot with the greatest timestamp.
pub fn orderbook_stats(snapshots: &[OrderbookSnapshot], window: BookWindow) -> Result<OrderbookStats> {
    let latest = snapshots
        .iter()
        .max_by_key(|s| s.ts)
        .ok_or_else(|| CoreError::Invalid("no orderbook snapshots in window".into()))?;
    let mut biggest = 0.0f64;
    let mut max_gap = 0.0f64;
    for s in snapshots {
        for side in [&s.bids, &s.asks] {
            for l in side.iter() {
                biggest = biggest.max(l.size);
            }
            for w in side.windows(2) {
                max_gap = max_gap.max((w[1].price - w[0].price).abs());
            }
        }
    }
    Ok(OrderbookStats {
        window,
        biggest_order_size: biggest,
        max_gap,
        bid_ask_imbalance: imbalance(latest),
    })
}
