use std::collections::BTreeMap;

use crate::error::{NnError, Result};
use crate::params::{Gradients, ParameterSet};

/// `w ← w − lr·g` for every trainable tensor.
pub fn optimizer_step(params: &mut ParameterSet, grads: &Gradients, learning_rate: f64) -> Result<()> {
    for (name, p) in params.iter_mut() {
        if !p.trainable {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
        if g.len() != p.tensor.len() {
            return Err(NnError::Shape {
                layer: name.to_string(),
                detail: format!("gradient length {} vs tensor {}", g.len(), p.tensor.len()),
            });
        }
        for (w, gv) in p.tensor.values_mut().iter_mut().zip(g) {
            *w -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Stochastic gradient descent with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(NnError::InvalidInput(format!(
                "need lr >= 0 and momentum in [0, 1), got {learning_rate}, {momentum}"
            )));
        }
        Ok(Self {
            learning_rate,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients) -> Result<()> {
        if self.momentum == 0.0 {
            return optimizer_step(params, grads, self.learning_rate);
        }
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads
                .get(name)
                .ok_or_else(|| NnError::MissingParam(name.to_string()))?;
            if g.len() != p.tensor.len() {
                return Err(NnError::Shape {
                    layer: name.to_string(),
                    detail: "gradient length mismatch".into(),
                });
            }
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; g.len()]);
            for ((w, vel), gv) in p.tensor.values_mut().iter_mut().zip(v.iter_mut()).zip(g) {
                *vel = self.momentum * *vel + gv;
                *w -= self.learning_rate * *vel;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamRole;
    use crate::tensor::Tensor;

    fn single(w: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("w", Tensor::vector(vec![w]), ParamRole::Weight).unwrap();
        p
    }

    fn grad_of(p: &ParameterSet, g: f64) -> Gradients {
        let mut grads = p.zero_gradients();
        grads.slot("w").unwrap()[0] = g;
        grads
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut p = single(1.0);
        let g = grad_of(&p, 0.5);
        optimizer_step(&mut p, &g, 0.1).unwrap();
        assert!((p.tensor("w").unwrap().values()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = single(1.25);
        let g = grad_of(&p, 7.0);
        let before = p.clone();
        optimizer_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_equal_summed_delta() {
        let mut a = single(0.3);
        let g = grad_of(&a, 0.25);
        optimizer_step(&mut a, &g, 0.5).unwrap();
        optimizer_step(&mut a, &g, 0.5).unwrap();
        let mut b = single(0.3);
        let mut g2 = g.clone();
        g2.scale(2.0);
        optimizer_step(&mut b, &g2, 0.5).unwrap();
        assert!((a.tensor("w").unwrap().values()[0] - b.tensor("w").unwrap().values()[0]).abs() < 1e-15);
    }

    #[test]
    fn frozen_tensor_is_untouched() {
        let mut p = single(2.0);
        p.set_trainable("w", false).unwrap();
        let g = grad_of(&p, 1.0);
        optimizer_step(&mut p, &g, 1.0).unwrap();
        assert_eq!(p.tensor("w").unwrap().values()[0], 2.0);
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = single(2.0);
        let mut other = ParameterSet::new();
        other.insert("w", Tensor::zeros(vec![3]), ParamRole::Weight).unwrap();
        let g = other.zero_gradients();
        assert!(optimizer_step(&mut p, &g, 1.0).is_err());
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = single(0.0);
        let g = grad_of(&p, 1.0);
        let mut opt = Sgd::new(0.1, 0.5).unwrap();
        opt.step(&mut p, &g).unwrap();
        opt.step(&mut p, &g).unwrap();
        // v1 = 1, v2 = 1.5 → w = -0.1 - 0.15
        assert!((p.tensor("w").unwrap().values()[0] + 0.25).abs() < 1e-15);
    }
}
