use rand::Rng;

use crate::error::{NnError, Result};
use crate::loss::{cross_entropy_grad, loss, softmax, softmax_backward, LossConfig};
use crate::params::{Gradients, ParamRole, ParameterSet};
use crate::tensor::Tensor;

/// One stage of a [`Sequential`] network.
///
/// `Conv1d` consumes `[channels, length]` and produces
/// `[out_channels, (length - kernel) / stride + 1]`; `Dense` consumes a rank-1
/// tensor. Activations are element-wise and keep the shape. `Softmax` needs
/// rank 1. `Flatten` collapses any shape to rank 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Relu,
    Tanh,
    Softmax,
    Flatten,
}

impl LayerSpec {
    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Tanh => "tanh",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Flatten => "flatten",
        }
    }

    fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. })
    }

    fn weight_shape(&self) -> Option<Vec<usize>> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some(vec![out_channels, in_channels, kernel]),
            LayerSpec::Dense { inputs, outputs } => Some(vec![outputs, inputs]),
            _ => None,
        }
    }

    fn bias_len(&self) -> Option<usize> {
        match *self {
            LayerSpec::Conv1d { out_channels, .. } => Some(out_channels),
            LayerSpec::Dense { outputs, .. } => Some(outputs),
            _ => None,
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel, out_channels * kernel),
            LayerSpec::Dense { inputs, outputs } => (inputs, outputs),
            _ => (0, 0),
        }
    }

    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if input.len() != 2 || input[0] != in_channels {
                    return Err(format!("expected [{in_channels}, length], got {input:?}"));
                }
                if input[1] < kernel {
                    return Err(format!("length {} shorter than kernel {kernel}", input[1]));
                }
                Ok(vec![out_channels, (input[1] - kernel) / stride + 1])
            }
            LayerSpec::Dense { inputs, outputs } => {
                if input.len() != 1 || input[0] != inputs {
                    return Err(format!("expected [{inputs}], got {input:?}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Softmax => {
                if input.len() != 1 || input[0] == 0 {
                    return Err(format!("expected a non-empty vector, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let ok = match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => in_channels >= 1 && out_channels >= 1 && kernel >= 1 && stride >= 1,
            LayerSpec::Dense { inputs, outputs } => inputs >= 1 && outputs >= 1,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err("all sizes must be >= 1".into())
        }
    }
}

/// A named chain of layers. Parameters are stored as `<name>.<index>.weight`
/// and `<name>.<index>.bias` in a [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    name: String,
    layers: Vec<LayerSpec>,
}

/// Activations recorded by [`Sequential::forward_trace`]; `activations[0]` is
/// the input and `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace always holds the input")
    }
}

impl Sequential {
    pub fn new(name: impl Into<String>, layers: Vec<LayerSpec>) -> Result<Self> {
        let name = name.into();
        for (i, l) in layers.iter().enumerate() {
            l.validate()
                .map_err(|d| NnError::shape(format!("{name}.{i} ({})", l.kind()), d))?;
        }
        Ok(Self { name, layers })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    fn layer_label(&self, i: usize) -> String {
        format!("{}.{i} ({})", self.name, self.layers[i].kind())
    }

    pub fn weight_name(&self, i: usize) -> String {
        format!("{}.{i}.weight", self.name)
    }

    pub fn bias_name(&self, i: usize) -> String {
        format!("{}.{i}.bias", self.name)
    }

    /// Shape produced for `input`, checking every layer boundary on the way.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            shape = l
                .output_shape(&shape)
                .map_err(|d| NnError::shape(self.layer_label(i), d))?;
        }
        Ok(shape)
    }

    /// Adds freshly initialised tensors for every parameterised layer.
    /// Weights are uniform in ±sqrt(6 / (fan_in + fan_out)); biases start at zero.
    pub fn init_params<R: Rng + ?Sized>(&self, params: &mut ParameterSet, rng: &mut R) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            let (Some(wshape), Some(blen)) = (l.weight_shape(), l.bias_len()) else {
                continue;
            };
            let (fan_in, fan_out) = l.fans();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = wshape.iter().product();
            let values = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
            params.insert(self.weight_name(i), Tensor::new(wshape, values)?, ParamRole::Weight)?;
            params.insert(self.bias_name(i), Tensor::zeros(vec![blen]), ParamRole::Bias)?;
        }
        Ok(())
    }

    /// Parameter names owned by this network, in layer order.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.has_params() {
                out.push(self.weight_name(i));
                out.push(self.bias_name(i));
            }
        }
        out
    }

    /// Number of scalars this network owns.
    pub fn param_len(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| Some(l.weight_shape()?.iter().product::<usize>() + l.bias_len()?))
            .sum()
    }

    fn layer_params<'a>(&self, params: &'a ParameterSet, i: usize) -> Result<(&'a [f64], &'a [f64])> {
        let l = &self.layers[i];
        let w = params.tensor(&self.weight_name(i))?;
        let b = params.tensor(&self.bias_name(i))?;
        if Some(w.shape().to_vec()) != l.weight_shape() || Some(b.len()) != l.bias_len() {
            return Err(NnError::shape(
                self.layer_label(i),
                format!("parameter shapes {:?}/{:?} do not match layer", w.shape(), b.shape()),
            ));
        }
        Ok((w.values(), b.values()))
    }

    fn apply(&self, params: &ParameterSet, i: usize, x: &Tensor) -> Result<Tensor> {
        let l = self.layers[i];
        let out_shape = l
            .output_shape(x.shape())
            .map_err(|d| NnError::shape(self.layer_label(i), d))?;
        let xv = x.values();
        let out = match l {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (w, b) = self.layer_params(params, i)?;
                let len = x.shape()[1];
                let out_len = out_shape[1];
                let mut y = vec![0.0; out_channels * out_len];
                for o in 0..out_channels {
                    let yrow = &mut y[o * out_len..(o + 1) * out_len];
                    yrow.iter_mut().for_each(|v| *v = b[o]);
                    for c in 0..in_channels {
                        let xrow = &xv[c * len..(c + 1) * len];
                        let wk = &w[(o * in_channels + c) * kernel..(o * in_channels + c + 1) * kernel];
                        for (t, yv) in yrow.iter_mut().enumerate() {
                            let start = t * stride;
                            let mut acc = 0.0;
                            for (k, wv) in wk.iter().enumerate() {
                                acc += wv * xrow[start + k];
                            }
                            *yv += acc;
                        }
                    }
                }
                y
            }
            LayerSpec::Dense { inputs, outputs } => {
                let (w, b) = self.layer_params(params, i)?;
                let mut y = b.to_vec();
                for (o, yv) in y.iter_mut().enumerate().take(outputs) {
                    let row = &w[o * inputs..(o + 1) * inputs];
                    *yv += row.iter().zip(xv).map(|(a, b)| a * b).sum::<f64>();
                }
                y
            }
            LayerSpec::Relu => xv.iter().map(|v| v.max(0.0)).collect(),
            LayerSpec::Tanh => xv.iter().map(|v| v.tanh()).collect(),
            LayerSpec::Softmax => softmax(xv).map_err(|e| NnError::shape(self.layer_label(i), e.to_string()))?,
            LayerSpec::Flatten => xv.to_vec(),
        };
        Tensor::new(out_shape, out)
    }

    pub fn forward(&self, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
        let mut x = input.clone();
        for i in 0..self.layers.len() {
            x = self.apply(params, i, &x)?;
        }
        Ok(x)
    }

    pub fn forward_trace(&self, params: &ParameterSet, input: &Tensor) -> Result<Trace> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.clone());
        for i in 0..self.layers.len() {
            let next = self.apply(params, i, activations.last().expect("non-empty"))?;
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Back-propagates `grad_out` (d loss / d output) through the traced pass.
    /// Parameter gradients are accumulated into `grads`; the gradient with
    /// respect to the network input is returned.
    pub fn backward_trace(
        &self,
        params: &ParameterSet,
        trace: &Trace,
        grad_out: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(NnError::InvalidInput("trace does not belong to this network".into()));
        }
        if grad_out.len() != trace.output().len() {
            return Err(NnError::shape(
                self.name.clone(),
                format!("output gradient of length {} for output of {}", grad_out.len(), trace.output().len()),
            ));
        }
        let mut g = grad_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let x = &trace.activations[i];
            let y = &trace.activations[i + 1];
            let xv = x.values();
            g = match self.layers[i] {
                LayerSpec::Conv1d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let (w, _) = self.layer_params(params, i)?;
                    let len = x.shape()[1];
                    let out_len = y.shape()[1];
                    let mut dx = vec![0.0; xv.len()];
                    {
                        let dw = grads.slot(&self.weight_name(i))?;
                        for o in 0..out_channels {
                            let grow = &g[o * out_len..(o + 1) * out_len];
                            for c in 0..in_channels {
                                let base = (o * in_channels + c) * kernel;
                                let xrow = &xv[c * len..(c + 1) * len];
                                let dxrow = &mut dx[c * len..(c + 1) * len];
                                for (t, gv) in grow.iter().enumerate() {
                                    let start = t * stride;
                                    for k in 0..kernel {
                                        dw[base + k] += gv * xrow[start + k];
                                        dxrow[start + k] += gv * w[base + k];
                                    }
                                }
                            }
                        }
                    }
                    let db = grads.slot(&self.bias_name(i))?;
                    for o in 0..out_channels {
                        db[o] += g[o * out_len..(o + 1) * out_len].iter().sum::<f64>();
                    }
                    dx
                }
                LayerSpec::Dense { inputs, outputs } => {
                    let (w, _) = self.layer_params(params, i)?;
                    let mut dx = vec![0.0; inputs];
                    {
                        let dw = grads.slot(&self.weight_name(i))?;
                        for o in 0..outputs {
                            let go = g[o];
                            if go == 0.0 {
                                continue;
                            }
                            let row = &w[o * inputs..(o + 1) * inputs];
                            let drow = &mut dw[o * inputs..(o + 1) * inputs];
                            for j in 0..inputs {
                                drow[j] += go * xv[j];
                                dx[j] += go * row[j];
                            }
                        }
                    }
                    let db = grads.slot(&self.bias_name(i))?;
                    for o in 0..outputs {
                        db[o] += g[o];
                    }
                    dx
                }
                LayerSpec::Relu => g
                    .iter()
                    .zip(xv)
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect(),
                LayerSpec::Tanh => g
                    .iter()
                    .zip(y.values())
                    .map(|(gv, yv)| gv * (1.0 - yv * yv))
                    .collect(),
                LayerSpec::Softmax => softmax_backward(y.values(), &g),
                LayerSpec::Flatten => g,
            };
        }
        Ok(g)
    }
}

/// Pure forward pass of `net` on `input`.
pub fn forward(net: &Sequential, params: &ParameterSet, input: &Tensor) -> Result<Tensor> {
    net.forward(params, input)
}

/// Loss and exact parameter gradients for one labelled sample.
///
/// `net` must end in a `Softmax` layer. Frozen tensors receive zero gradient;
/// trainable weights receive the additional `2λw` L2 term.
pub fn backward(
    net: &Sequential,
    params: &ParameterSet,
    input: &Tensor,
    label: usize,
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    if net.layers().last() != Some(&LayerSpec::Softmax) {
        return Err(NnError::InvalidInput(format!(
            "network `{}` must end in softmax to be trained with cross-entropy",
            net.name()
        )));
    }
    let trace = net.forward_trace(params, input)?;
    let probs = trace.output().values();
    let value = loss(probs, label, params, cfg)?;
    let g = cross_entropy_grad(probs, label, cfg)?;
    let mut grads = params.zero_gradients();
    net.backward_trace(params, &trace, &g, &mut grads)?;
    grads.finalize(params, cfg.lambda_l2);
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(params: &mut ParameterSet, name: &str, shape: Vec<usize>, values: Vec<f64>, role: ParamRole) {
        params.insert(name, Tensor::new(shape, values).unwrap(), role).unwrap();
    }

    #[test]
    fn identity_conv_returns_series() {
        let net = Sequential::new(
            "c",
            vec![LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel: 1,
                stride: 1,
            }],
        )
        .unwrap();
        let mut p = ParameterSet::new();
        set(&mut p, "c.0.weight", vec![1, 1, 1], vec![1.0], ParamRole::Weight);
        set(&mut p, "c.0.bias", vec![1], vec![0.0], ParamRole::Bias);
        let x = Tensor::new(vec![1, 5], vec![3.0, -1.0, 4.0, 1.5, 9.0]).unwrap();
        let y = net.forward(&p, &x).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn averaging_conv_hand_values() {
        let net = Sequential::new(
            "c",
            vec![LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel: 3,
                stride: 1,
            }],
        )
        .unwrap();
        let mut p = ParameterSet::new();
        set(&mut p, "c.0.weight", vec![1, 1, 3], vec![1.0 / 3.0; 3], ParamRole::Weight);
        set(&mut p, "c.0.bias", vec![1], vec![0.0], ParamRole::Bias);
        let x = Tensor::new(vec![1, 4], vec![3.0, 6.0, 9.0, 12.0]).unwrap();
        let y = net.forward(&p, &x).unwrap();
        assert_eq!(y.shape(), &[1, 2]);
        assert!((y.values()[0] - 6.0).abs() < 1e-12);
        assert!((y.values()[1] - 9.0).abs() < 1e-12);
    }

    #[test]
    fn zero_input_dense_gives_bias() {
        let net = Sequential::new("d", vec![LayerSpec::Dense { inputs: 3, outputs: 2 }]).unwrap();
        let mut p = ParameterSet::new();
        set(&mut p, "d.0.weight", vec![2, 3], vec![0.3, -2.0, 1.0, 4.0, 0.5, 0.25], ParamRole::Weight);
        set(&mut p, "d.0.bias", vec![2], vec![0.7, -1.25], ParamRole::Bias);
        let y = net.forward(&p, &Tensor::zeros(vec![3])).unwrap();
        assert_eq!(y.values(), &[0.7, -1.25]);
    }

    #[test]
    fn shape_error_names_layer() {
        let net = Sequential::new(
            "head",
            vec![
                LayerSpec::Dense { inputs: 4, outputs: 2 },
                LayerSpec::Dense { inputs: 3, outputs: 1 },
            ],
        )
        .unwrap();
        let err = net.output_shape(&[4]).unwrap_err().to_string();
        assert!(err.contains("head.1 (dense)"), "{err}");
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(Sequential::new("z", vec![LayerSpec::Dense { inputs: 0, outputs: 1 }]).is_err());
    }

    #[test]
    fn dense_5_to_1_has_six_params() {
        let net = Sequential::new("t", vec![LayerSpec::Dense { inputs: 5, outputs: 1 }]).unwrap();
        let mut p = ParameterSet::new();
        net.init_params(&mut p, &mut rand::rng()).unwrap();
        assert_eq!(crate::param_count(&p), 6);
        assert_eq!(net.param_len(), 6);
    }

    #[test]
    fn backward_requires_softmax_head() {
        let net = Sequential::new("t", vec![LayerSpec::Dense { inputs: 2, outputs: 3 }]).unwrap();
        let mut p = ParameterSet::new();
        net.init_params(&mut p, &mut rand::rng()).unwrap();
        let cfg = LossConfig::new(0.0, 3).unwrap();
        assert!(backward(&net, &p, &Tensor::zeros(vec![2]), 0, &cfg).is_err());
    }
}
