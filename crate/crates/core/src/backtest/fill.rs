use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Timestamp;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl Side {
    pub fn opposite(self) -> Self {
        match self {
            Side::Buy => Side::Sell,
            Side::Sell => Side::Buy,
        }
    }

    /// +1 for buy, −1 for sell.
    pub fn sign(self) -> f64 {
        match self {
            Side::Buy => 1.0,
            Side::Sell => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub ts: Timestamp,
    pub side: Side,
    pub quantity: f64,
    pub reference_price: f64,
    pub executed_price: f64,
    pub fee: f64,
}

impl Fill {
    pub fn notional(&self) -> f64 {
        self.quantity * self.executed_price
    }

    /// Signed cash change caused by this fill.
    pub fn cash_delta(&self) -> f64 {
        match self.side {
            Side::Buy => -(self.notional() + self.fee),
            Side::Sell => self.notional() - self.fee,
        }
    }
}

/// Fill at `reference_price` moved against the trader by `slippage_bps`.
pub fn apply_fill(
    ts: Timestamp,
    side: Side,
    quantity: f64,
    reference_price: f64,
    fee_rate: f64,
    slippage_bps: f64,
) -> Result<Fill> {
    if !(quantity > 0.0) || !(reference_price > 0.0) || !(fee_rate >= 0.0) || !(slippage_bps >= 0.0) {
        return Err(CoreError::Invalid(format!(
            "bad fill inputs: qty {quantity}, price {reference_price}, fee rate {fee_rate}, slippage {slippage_bps}"
        )));
    }
    let executed_price = reference_price * (1.0 + side.sign() * slippage_bps / 1e4);
    if !(executed_price > 0.0) {
        return Err(CoreError::Invalid(format!("slippage of {slippage_bps} bps leaves no price")));
    }
    Ok(Fill {
        ts,
        side,
        quantity,
        reference_price,
        executed_price,
        fee: fee_rate * quantity * executed_price,
    })
}

/// Half-normal adverse slippage with the given mean, in basis points.
#[derive(Debug, Clone, Copy)]
pub struct SlippageModel {
    normal: Option<Normal<f64>>,
}

impl SlippageModel {
    pub fn new(mean_bps: f64) -> Result<Self> {
        if !(mean_bps >= 0.0) || !mean_bps.is_finite() {
            return Err(CoreError::Config(format!("slippage mean must be >= 0, got {mean_bps}")));
        }
        let normal = if mean_bps == 0.0 {
            None
        } else {
            let sigma = mean_bps * (std::f64::consts::PI / 2.0).sqrt();
            Some(Normal::new(0.0, sigma).expect("positive sigma"))
        };
        Ok(Self { normal })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.normal.map_or(0.0, |n| n.sample(rng).abs())
    }
}
