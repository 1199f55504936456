use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Fixed `(center, scale)` per feature, set at configuration time and never
/// estimated from the data being processed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    entries: BTreeMap<String, (f64, f64)>,
}

impl NormalizationSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, feature: impl Into<String>, center: f64, scale: f64) -> Result<()> {
        let feature = feature.into();
        if !(scale.is_finite() && scale > 0.0) || !center.is_finite() {
            return Err(CoreError::Config(format!(
                "normalization for `{feature}` needs finite center and scale > 0, got ({center}, {scale})"
            )));
        }
        self.entries.insert(feature, (center, scale));
        Ok(())
    }

    pub fn with(mut self, feature: &str, center: f64, scale: f64) -> Result<Self> {
        self.set(feature, center, scale)?;
        Ok(self)
    }

    pub fn get(&self, feature: &str) -> Option<(f64, f64)> {
        self.entries.get(feature).copied()
    }

    pub fn contains(&self, feature: &str) -> bool {
        self.entries.contains_key(feature)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, (f64, f64))> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// `(raw − center) / scale`. Unknown features are an error.
    pub fn normalize(&self, feature: &str, raw: f64) -> Result<f64> {
        let (center, scale) = self
            .get(feature)
            .ok_or_else(|| CoreError::Config(format!("no normalization entry for feature `{feature}`")))?;
        Ok((raw - center) / scale)
    }

    pub fn denormalize(&self, feature: &str, value: f64) -> Result<f64> {
        let (center, scale) = self
            .get(feature)
            .ok_or_else(|| CoreError::Config(format!("no normalization entry for feature `{feature}`")))?;
        Ok(value * scale + center)
    }
}

/// Free-function form of [`NormalizationSpec::normalize`].
pub fn normalize(feature: &str, raw: f64, spec: &NormalizationSpec) -> Result<f64> {
    spec.normalize(feature, raw)
}
