use ptnn::{argmax, softmax_backward, Gradients, LayerSpec, ParameterSet, Sequential, Tensor, Trace};
use serde::{Deserialize, Serialize};

use super::attention::{scorer_input, weighted_sum, AttentionContext, AttentionResult, HeadOutput, HeadSource};
use crate::data::Timeframe;
use crate::error::{CoreError, Result};
use crate::features::{FeatureConfig, FeatureFrame, SENTIMENT_WINDOW};
use crate::seed::stage_rng;

pub const CLASS_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Buy = 0,
    Sell = 1,
    Hold = 2,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::Buy, Direction::Sell, Direction::Hold];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Buy => "buy",
            Direction::Sell => "sell",
            Direction::Hold => "hold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    PaperScale,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    Attention,
    /// Mean of head vectors; used for the attention ablation.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionModelConfig {
    pub preset: Preset,
    pub heads: Vec<HeadSource>,
    /// Input channels and lookback per timeframe head.
    pub input_channels: [usize; 3],
    pub lookbacks: [usize; 3],
    pub conv: [Vec<ConvStage>; 3],
    pub orderbook_width: usize,
    pub sentiment_len: usize,
    pub d: usize,
    pub context_width: usize,
    pub attention_hidden: usize,
    pub classifier_hidden: Vec<usize>,
    pub lambda_l2: f64,
    pub fusion: Fusion,
    pub schema_hash: String,
}

fn tf_index(tf: Timeframe) -> usize {
    match tf {
        Timeframe::Minute => 0,
        Timeframe::Hour => 1,
        Timeframe::Day => 2,
    }
}

fn head_timeframe(src: HeadSource) -> Option<Timeframe> {
    match src {
        HeadSource::Minute => Some(Timeframe::Minute),
        HeadSource::Hour => Some(Timeframe::Hour),
        HeadSource::Day => Some(Timeframe::Day),
        HeadSource::Orderbook => None,
    }
}

impl DirectionModelConfig {
    fn base(features: &FeatureConfig, preset: Preset, width: usize, d: usize, classifier_hidden: Vec<usize>) -> Self {
        let stage = |k| ConvStage {
            out_channels: width,
            kernel: k,
            stride: 2,
        };
        Self {
            preset,
            heads: HeadSource::ALL.to_vec(),
            input_channels: Timeframe::ALL.map(|tf| features.channels(tf).len()),
            lookbacks: Timeframe::ALL.map(|tf| features.lookback(tf)),
            conv: [vec![stage(5), stage(5)], vec![stage(5), stage(5)], vec![stage(5), stage(3)]],
            orderbook_width: features.orderbook_width(),
            sentiment_len: SENTIMENT_WINDOW,
            d,
            context_width: 2,
            attention_hidden: 32,
            classifier_hidden,
            lambda_l2: 1e-4,
            fusion: Fusion::Attention,
            schema_hash: features.schema_hash(),
        }
    }

    /// Small model for fast training and tests.
    pub fn desk(features: &FeatureConfig) -> Self {
        Self::base(features, Preset::Desk, 8, 32, vec![32])
    }

    /// Large model sized at roughly 520k trainable parameters for the default feature layout.
    pub fn paper_scale(features: &FeatureConfig) -> Self {
        Self::base(features, Preset::PaperScale, 40, 128, vec![528, 528])
    }

    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(CoreError::Config("direction model needs at least one head".into()));
        }
        let mut seen = self.heads.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.heads.len() {
            return Err(CoreError::Config("duplicate head".into()));
        }
        if self.d == 0 || self.attention_hidden == 0 || self.classifier_hidden.contains(&0) {
            return Err(CoreError::Config("widths must be >= 1".into()));
        }
        if !(self.lambda_l2 >= 0.0) {
            return Err(CoreError::Config("lambda_l2 must be >= 0".into()));
        }
        for tf in Timeframe::ALL {
            let lookback = self.lookbacks[tf_index(tf)];
            self.conv_net(tf)?
                .output_shape(&[self.input_channels[tf_index(tf)], lookback])
                .map_err(|e| CoreError::Config(format!("{} lookback {lookback} too short for the conv stack: {e}", tf.as_str())))?;
        }
        Ok(())
    }

    fn conv_net(&self, tf: Timeframe) -> Result<Sequential> {
        let mut layers = Vec::new();
        let mut ch = self.input_channels[tf_index(tf)];
        for s in &self.conv[tf_index(tf)] {
            layers.push(LayerSpec::Conv1d {
                in_channels: ch,
                out_channels: s.out_channels,
                kernel: s.kernel,
                stride: s.stride,
            });
            layers.push(LayerSpec::Relu);
            ch = s.out_channels;
        }
        layers.push(LayerSpec::Flatten);
        Ok(Sequential::new(format!("{}.conv", tf.as_str()), layers)?)
    }
}

struct Head {
    source: HeadSource,
    conv: Option<Sequential>,
    proj: Sequential,
}

/// Multi-head CNN + orderbook head, attention fusion and dense classifier.
pub struct DirectionModel {
    pub config: DirectionModelConfig,
    pub params: ParameterSet,
    heads: Vec<Head>,
    scorer: Sequential,
    classifier: Sequential,
}

impl Clone for DirectionModel {
    fn clone(&self) -> Self {
        Self::with_params(self.config.clone(), self.params.clone()).expect("valid model")
    }
}

impl std::fmt::Debug for DirectionModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DirectionModel")
            .field("preset", &self.config.preset)
            .field("fusion", &self.config.fusion)
            .field("params", &self.params.total_count())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPrediction {
    pub probs: [f64; CLASS_COUNT],
    pub predicted_class: Direction,
    pub confidence: f64,
    /// Per-head attention weights in head order (uniform under mean fusion).
    pub head_weights: Vec<f64>,
}

impl DirectionPrediction {
    pub fn from_probs(probs: [f64; CLASS_COUNT], head_weights: Vec<f64>) -> Self {
        let idx = argmax(&probs).expect("three classes");
        Self {
            probs,
            predicted_class: Direction::from_index(idx).expect("class index"),
            confidence: probs[idx],
            head_weights,
        }
    }
}

struct HeadTrace {
    conv: Option<Trace>,
    flat_len: usize,
    proj: Trace,
}

pub(crate) struct ForwardTrace {
    heads: Vec<HeadTrace>,
    scorer: Vec<Trace>,
    attention: AttentionResult,
    classifier: Trace,
}

impl ForwardTrace {
    pub(crate) fn probs(&self) -> &[f64] {
        self.classifier.output().values()
    }
}

impl DirectionModel {
    fn build(config: &DirectionModelConfig) -> Result<(Vec<Head>, Sequential, Sequential)> {
        config.validate()?;
        let mut heads = Vec::new();
        for &source in &config.heads {
            let (conv, proj_in) = match head_timeframe(source) {
                Some(tf) => {
                    let net = config.conv_net(tf)?;
                    let shape =
                        net.output_shape(&[config.input_channels[tf_index(tf)], config.lookbacks[tf_index(tf)]])?;
                    (Some(net), shape[0] + config.sentiment_len)
                }
                None => (None, config.orderbook_width),
            };
            let proj = Sequential::new(
                format!("{}.proj", source.as_str()),
                vec![
                    LayerSpec::Dense {
                        inputs: proj_in,
                        outputs: config.d,
                    },
                    LayerSpec::Tanh,
                ],
            )?;
            heads.push(Head { source, conv, proj });
        }
        let scorer = Sequential::new(
            "att",
            vec![
                LayerSpec::Dense {
                    inputs: config.d + config.context_width,
                    outputs: config.attention_hidden,
                },
                LayerSpec::Tanh,
                LayerSpec::Dense {
                    inputs: config.attention_hidden,
                    outputs: 1,
                },
            ],
        )?;
        let mut layers = Vec::new();
        let mut width = config.d;
        for &h in &config.classifier_hidden {
            layers.push(LayerSpec::Dense { inputs: width, outputs: h });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: CLASS_COUNT,
        });
        layers.push(LayerSpec::Softmax);
        let classifier = Sequential::new("cls", layers)?;
        Ok((heads, scorer, classifier))
    }

    fn nets(&self) -> impl Iterator<Item = &Sequential> {
        self.heads
            .iter()
            .flat_map(|h| h.conv.iter().chain(std::iter::once(&h.proj)))
            .chain([&self.scorer, &self.classifier])
    }

    /// Freshly initialized model (Glorot weights, zero biases).
    pub fn new(config: DirectionModelConfig, seed: u64) -> Result<Self> {
        let (heads, scorer, classifier) = Self::build(&config)?;
        let mut model = Self {
            config,
            params: ParameterSet::new(),
            heads,
            scorer,
            classifier,
        };
        let mut rng = stage_rng(seed, "direction.init");
        let mut params = ParameterSet::new();
        for net in model.nets() {
            net.init_params(&mut params, &mut rng)?;
        }
        model.params = params;
        Ok(model)
    }

    /// Model over an existing parameter set, which must match the config exactly.
    pub fn with_params(config: DirectionModelConfig, params: ParameterSet) -> Result<Self> {
        let (heads, scorer, classifier) = Self::build(&config)?;
        let model = Self {
            config,
            params,
            heads,
            scorer,
            classifier,
        };
        let expected: usize = model.nets().map(|n| n.param_names().len()).sum();
        for net in model.nets() {
            for name in net.param_names() {
                model.params.get(&name)?;
            }
        }
        if expected != model.params.len() {
            return Err(CoreError::Shape(format!(
                "parameter set has {} tensors, model expects {expected}",
                model.params.len()
            )));
        }
        Ok(model)
    }

    pub fn param_count(&self) -> usize {
        self.params.total_count()
    }

    pub fn scorer(&self) -> &Sequential {
        &self.scorer
    }

    pub fn classifier(&self) -> &Sequential {
        &self.classifier
    }

    pub fn head_sources(&self) -> Vec<HeadSource> {
        self.heads.iter().map(|h| h.source).collect()
    }

    fn check_frame(&self, frame: &FeatureFrame, ctx: &AttentionContext) -> Result<()> {
        let c = &self.config;
        for tf in Timeframe::ALL {
            let want = [c.input_channels[tf_index(tf)], c.lookbacks[tf_index(tf)]];
            if frame.head(tf).shape() != want {
                return Err(CoreError::Shape(format!(
                    "{} head is {:?}, model expects {want:?}",
                    tf.as_str(),
                    frame.head(tf).shape()
                )));
            }
        }
        if frame.orderbook.len() != c.orderbook_width || frame.sentiment.len() != c.sentiment_len {
            return Err(CoreError::Shape("orderbook or sentiment width differs from model".into()));
        }
        if ctx.h.len() != c.context_width {
            return Err(CoreError::Shape(format!("context width {} != {}", ctx.h.len(), c.context_width)));
        }
        Ok(())
    }

    pub(crate) fn forward_trace(
        &self,
        frame: &FeatureFrame,
        ctx: &AttentionContext,
        fusion: Fusion,
    ) -> Result<ForwardTrace> {
        self.check_frame(frame, ctx)?;
        let mut head_traces = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let (conv, proj_input, flat_len) = match (&head.conv, head_timeframe(head.source)) {
                (Some(net), Some(tf)) => {
                    let t = net.forward_trace(&self.params, frame.head(tf))?;
                    let mut v = t.output().values().to_vec();
                    let flat_len = v.len();
                    v.extend_from_slice(&frame.sentiment);
                    (Some(t), v, flat_len)
                }
                _ => (None, frame.orderbook.clone(), frame.orderbook.len()),
            };
            let proj = head.proj.forward_trace(&self.params, &Tensor::vector(proj_input))?;
            head_traces.push(HeadTrace { conv, flat_len, proj });
        }
        let xs: Vec<&[f64]> = head_traces.iter().map(|h| h.proj.output().values()).collect();
        let mut scorer = Vec::new();
        let attention = match fusion {
            Fusion::Attention => {
                let mut energies = Vec::with_capacity(xs.len());
                for x in &xs {
                    let t = self.scorer.forward_trace(&self.params, &scorer_input(x, &ctx.h))?;
                    energies.push(t.output().values()[0]);
                    scorer.push(t);
                }
                let weights = ptnn::softmax(&energies)?;
                let context = weighted_sum(&weights, &xs);
                AttentionResult {
                    energies,
                    weights,
                    context,
                }
            }
            Fusion::Mean => {
                let weights = vec![1.0 / xs.len() as f64; xs.len()];
                let context = weighted_sum(&weights, &xs);
                AttentionResult {
                    energies: vec![0.0; xs.len()],
                    weights,
                    context,
                }
            }
        };
        let classifier = self
            .classifier
            .forward_trace(&self.params, &Tensor::vector(attention.context.clone()))?;
        Ok(ForwardTrace {
            heads: head_traces,
            scorer,
            attention,
            classifier,
        })
    }

    /// Head vectors for diagnostics.
    pub fn head_outputs(&self, frame: &FeatureFrame, ctx: &AttentionContext) -> Result<Vec<HeadOutput>> {
        let t = self.forward_trace(frame, ctx, Fusion::Mean)?;
        Ok(self
            .heads
            .iter()
            .zip(&t.heads)
            .map(|(h, ht)| HeadOutput {
                source: h.source,
                x: ht.proj.output().values().to_vec(),
            })
            .collect())
    }

    fn predict_with(&self, frame: &FeatureFrame, ctx: &AttentionContext, fusion: Fusion) -> Result<DirectionPrediction> {
        let t = self.forward_trace(frame, ctx, fusion)?;
        let p = t.probs();
        Ok(DirectionPrediction::from_probs([p[0], p[1], p[2]], t.attention.weights))
    }

    /// Prediction using the model's configured fusion.
    pub fn predict(&self, frame: &FeatureFrame, ctx: &AttentionContext) -> Result<DirectionPrediction> {
        self.predict_with(frame, ctx, self.config.fusion)
    }

    /// Prediction with attention bypassed (head vectors mean-pooled).
    pub fn predict_no_attention(&self, frame: &FeatureFrame, ctx: &AttentionContext) -> Result<DirectionPrediction> {
        self.predict_with(frame, ctx, Fusion::Mean)
    }

    /// Cross-entropy loss (without L2) and its parameter gradients, accumulated into `grads`.
    pub(crate) fn accumulate_gradients(
        &self,
        frame: &FeatureFrame,
        ctx: &AttentionContext,
        label: usize,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<f64> {
        let fusion = self.config.fusion;
        let t = self.forward_trace(frame, ctx, fusion)?;
        let probs = t.probs();
        let p = probs[label].max(ptnn::LOG_EPSILON);
        let loss = -p.ln();
        let mut g_out = vec![0.0; CLASS_COUNT];
        if probs[label] > ptnn::LOG_EPSILON {
            g_out[label] = -scale / probs[label];
        }
        let dc = self.classifier.backward_trace(&self.params, &t.classifier, &g_out, grads)?;
        let n = self.heads.len();
        let xs: Vec<&[f64]> = t.heads.iter().map(|h| h.proj.output().values()).collect();
        let alpha = &t.attention.weights;
        let mut dx: Vec<Vec<f64>> = (0..n).map(|i| dc.iter().map(|g| alpha[i] * g).collect()).collect();
        if fusion == Fusion::Attention {
            let dalpha: Vec<f64> = xs.iter().map(|x| x.iter().zip(&dc).map(|(a, b)| a * b).sum()).collect();
            let de = softmax_backward(alpha, &dalpha);
            for i in 0..n {
                let din = self.scorer.backward_trace(&self.params, &t.scorer[i], &[de[i]], grads)?;
                for (k, v) in dx[i].iter_mut().enumerate() {
                    *v += din[k];
                }
            }
        }
        for ((head, ht), dxi) in self.heads.iter().zip(&t.heads).zip(&dx) {
            let din = head.proj.backward_trace(&self.params, &ht.proj, dxi, grads)?;
            if let (Some(conv), Some(ct)) = (&head.conv, &ht.conv) {
                conv.backward_trace(&self.params, ct, &din[..ht.flat_len], grads)?;
            }
        }
        Ok(loss)
    }

    /// Loss with the L2 term and exact gradients for one sample.
    pub fn sample_gradients(
        &self,
        frame: &FeatureFrame,
        ctx: &AttentionContext,
        label: usize,
    ) -> Result<(f64, Gradients)> {
        if label >= CLASS_COUNT {
            return Err(CoreError::Invalid(format!("label {label} out of range")));
        }
        let mut grads = self.params.zero_gradients();
        let loss = self.accumulate_gradients(frame, ctx, label, 1.0, &mut grads)?;
        grads.finalize(&self.params, self.config.lambda_l2);
        Ok((loss + self.config.lambda_l2 * self.params.l2_sum(), grads))
    }

    /// Loss with the L2 term for one sample.
    pub fn sample_loss(&self, frame: &FeatureFrame, ctx: &AttentionContext, label: usize) -> Result<f64> {
        let t = self.forward_trace(frame, ctx, self.config.fusion)?;
        let p = t.probs()[label].max(ptnn::LOG_EPSILON);
        Ok(-p.ln() + self.config.lambda_l2 * self.params.l2_sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_is_small() {
        let m = DirectionModel::new(DirectionModelConfig::desk(&FeatureConfig::default()), 0).unwrap();
        assert!(m.param_count() < 60_000, "{}", m.param_count());
    }

    #[test]
    fn paper_scale_preset_count() {
        let m = DirectionModel::new(DirectionModelConfig::paper_scale(&FeatureConfig::default()), 0).unwrap();
        assert!((494_000..=546_000).contains(&m.param_count()), "{}", m.param_count());
    }

    #[test]
    fn duplicate_head_rejected() {
        let mut c = DirectionModelConfig::desk(&FeatureConfig::default());
        c.heads = vec![HeadSource::Minute, HeadSource::Minute];
        assert!(DirectionModel::new(c, 0).is_err());
    }
}
