use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

/// Whether a tensor is a multiplicative weight (subject to L2) or an additive bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub tensor: Tensor,
    pub trainable: bool,
    pub role: ParamRole,
}

/// Named collection of learnable tensors. Iteration order is by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor, role: ParamRole) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.entries.insert(
            name,
            Param {
                tensor,
                trainable: true,
                role,
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)?.trainable = trainable;
        Ok(())
    }

    /// Freezes (or unfreezes) every tensor whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for (name, p) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
                n += 1;
            }
        }
        n
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalar elements.
    pub fn total_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Σ w² over trainable weight tensors; biases are excluded.
    pub fn l2_sum(&self) -> f64 {
        self.entries
            .values()
            .filter(|p| p.trainable && p.role == ParamRole::Weight)
            .flat_map(|p| p.tensor.values().iter())
            .map(|w| w * w)
            .sum()
    }

    /// Zeroed gradient buffers matching every tensor in the set.
    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| (k.clone(), vec![0.0; p.tensor.len()]))
                .collect(),
        }
    }
}

/// Exact trainable-element count of a parameter set.
pub fn param_count(params: &ParameterSet) -> usize {
    params.total_count()
}

/// Gradient buffers keyed by parameter name (same shapes as the owning set).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    entries: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn slot(&mut self, name: &str) -> Result<&mut [f64]> {
        self.entries
            .get_mut(name)
            .map(Vec::as_mut_slice)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Element-wise `self += other`; both must cover the same names.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in other.entries.iter() {
            let dst = self.slot(name)?;
            if dst.len() != g.len() {
                return Err(NnError::shape(name.clone(), "gradient length mismatch"));
            }
            for (d, s) in dst.iter_mut().zip(g) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.entries.values_mut() {
            for v in g.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Zeroes gradients of frozen tensors and adds `2λw` for trainable weights.
    pub fn finalize(&mut self, params: &ParameterSet, lambda_l2: f64) {
        for (name, p) in params.iter() {
            let Some(g) = self.entries.get_mut(name) else {
                continue;
            };
            if !p.trainable {
                g.iter_mut().for_each(|v| *v = 0.0);
            } else if p.role == ParamRole::Weight && lambda_l2 != 0.0 {
                for (gv, w) in g.iter_mut().zip(p.tensor.values()) {
                    *gv += 2.0 * lambda_l2 * w;
                }
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Copies the buffers into the `grad` slots of `params`.
    pub fn attach(&self, params: &mut ParameterSet) -> Result<()> {
        for (name, p) in params.iter_mut() {
            if let Some(g) = self.entries.get(name) {
                p.tensor.set_grad(g.clone())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut p = ParameterSet::new();
        p.insert("a", Tensor::zeros(vec![2]), ParamRole::Weight).unwrap();
        assert!(matches!(
            p.insert("a", Tensor::zeros(vec![2]), ParamRole::Bias),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn total_count_skips_frozen() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::zeros(vec![5]), ParamRole::Weight).unwrap();
        p.insert("b", Tensor::zeros(vec![1]), ParamRole::Bias).unwrap();
        p.insert("f", Tensor::zeros(vec![7]), ParamRole::Weight).unwrap();
        p.set_trainable("f", false).unwrap();
        assert_eq!(p.total_count(), 6);
    }

    #[test]
    fn l2_excludes_biases() {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![2.0]), ParamRole::Weight).unwrap();
        p.insert("b", Tensor::vector(vec![3.0]), ParamRole::Bias).unwrap();
        assert_eq!(p.l2_sum(), 4.0);
    }
}
