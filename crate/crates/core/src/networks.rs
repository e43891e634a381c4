//! UNet-style generator with Bayesian dropout layers, and the five-layer
//! patch discriminator.
//!
//! Parameters live in a [`ParamStore`] so they can be checkpointed by name
//! and updated by the optimizer. A forward pass binds the store into a fresh
//! [`Graph`] and returns a [`Trace`] of the nodes the trainer needs.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    concrete_apply, concrete_regularizer_node, logit, mc_dropout_apply, BernoulliDropoutParams, ConcreteDropoutParams,
    DropoutMode, MaskGranularity,
};
use crate::rng::{self, StreamRng};
use crate::tensor::{Checkpoint, Graph, NodeId, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;
const KERNEL: usize = 4;
const HEAD_KERNEL: usize = 3;

// ─── specs ──────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutKind {
    Concrete,
    MonteCarlo,
    None,
}

impl std::str::FromStr for DropoutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concrete" => Ok(Self::Concrete),
            "monte_carlo" | "mc" => Ok(Self::MonteCarlo),
            "none" => Ok(Self::None),
            other => Err(Error::Config(format!("unknown dropout kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub input_size: usize,
    pub levels: usize,
    pub base_channels: usize,
    pub dropout_kind: DropoutKind,
    /// Decoder blocks (1-based, deepest first) followed by dropout.
    pub dropout_positions: Vec<usize>,
    /// Drop rate of the Monte Carlo baseline.
    pub mc_rate: f64,
    /// Initial concrete dropout probability.
    pub init_p: f64,
    pub mask_granularity: MaskGranularity,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl GeneratorSpec {
    pub fn desk() -> Self {
        Self {
            input_size: 32,
            levels: 4,
            base_channels: 16,
            dropout_kind: DropoutKind::Concrete,
            dropout_positions: vec![2, 3, 4],
            mc_rate: 0.5,
            init_p: 0.1,
            mask_granularity: MaskGranularity::Channel,
        }
    }

    pub fn paper() -> Self {
        Self { input_size: 256, levels: 8, base_channels: 64, ..Self::desk() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::Config(format!("levels must be in 1..=16, got {}", self.levels)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        let step = 1usize << self.levels;
        if self.input_size == 0 || self.input_size % step != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^levels = {step}",
                self.input_size
            )));
        }
        if let Some(bad) = self.dropout_positions.iter().find(|&&p| p == 0 || p > self.levels) {
            return Err(Error::Config(format!("dropout position {bad} outside 1..={}", self.levels)));
        }
        if !(0.0..1.0).contains(&self.mc_rate) {
            return Err(Error::Config(format!("mc_rate must lie in [0, 1), got {}", self.mc_rate)));
        }
        if !(self.init_p > 0.0 && self.init_p < 1.0) {
            return Err(Error::Config(format!("init_p must lie in (0, 1), got {}", self.init_p)));
        }
        Ok(())
    }

    /// Output channels of encoder level `i` (1-based).
    pub fn encoder_channels(&self, i: usize) -> usize {
        self.base_channels << (i - 1).min(3)
    }

    /// Output channels of decoder block `j` (1-based, deepest first).
    pub fn decoder_channels(&self, j: usize) -> usize {
        if j == self.levels {
            self.base_channels
        } else {
            self.encoder_channels(self.levels - j)
        }
    }

    /// Input channels of decoder block `j`: the previous block's output
    /// concatenated with the mirrored encoder level.
    pub fn decoder_input_channels(&self, j: usize) -> usize {
        let skip = self.encoder_channels(self.levels - j + 1);
        if j == 1 {
            skip
        } else {
            self.decoder_channels(j - 1) + skip
        }
    }

    fn has_dropout_at(&self, j: usize) -> bool {
        self.dropout_kind != DropoutKind::None && self.dropout_positions.contains(&j)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    /// Source and target stacked along channels.
    pub input_channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl DiscriminatorSpec {
    pub const CONV_LAYERS: usize = 5;
    pub const STRIDES: [usize; 5] = [2, 2, 2, 1, 1];

    pub fn desk() -> Self {
        Self { base_channels: 16, input_channels: 2 }
    }

    pub fn paper() -> Self {
        Self { base_channels: 64, input_channels: 2 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.input_channels == 0 {
            return Err(Error::Config("discriminator channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_channels(&self, i: usize) -> usize {
        if i == Self::CONV_LAYERS {
            1
        } else {
            self.base_channels << (i - 1).min(3)
        }
    }

    /// Spatial extent of the logit map for a square input.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        Self::STRIDES.iter().try_fold(input, |n, &s| (n + 2).checked_sub(KERNEL).map(|m| m / s + 1))
    }
}

// ─── parameter storage ──────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    /// Running statistics; checkpointed but never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f32>,
    pub kind: ParamKind,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    fn push(&mut self, name: String, value: Tensor<f32>, kind: ParamKind) -> usize {
        debug_assert!(self.entries.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.entries.push(Param { name, value, kind });
        self.entries.len() - 1
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.entries[index]
    }

    pub fn value_mut(&mut self, index: usize) -> &mut Tensor<f32> {
        &mut self.entries[index].value
    }

    pub fn find(&self, name: &str) -> Option<&Param> {
        self.entries.iter().find(|p| p.name == name)
    }

    /// Indices of trainable parameters, in declaration order.
    pub fn trainable(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].kind == ParamKind::Trainable).collect()
    }

    pub fn write_to(&self, ckpt: &mut Checkpoint) {
        for p in &self.entries {
            ckpt.insert(p.name.clone(), p.value.clone());
        }
    }

    /// Overwrites every entry from `ckpt`, checking shapes.
    pub fn read_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in &mut self.entries {
            let t = ckpt.require(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Malformed {
                    format: "checkpoint",
                    detail: format!("{} has shape {:?}, expected {:?}", p.name, t.shape(), p.value.shape()),
                });
            }
            p.value = t.clone();
        }
        Ok(())
    }

    /// Adds every entry to `g`. Trainable entries require grad iff `train`.
    pub fn bind(&self, g: &mut Graph<f32>, train: bool) -> Bound {
        let ids = self
            .entries
            .iter()
            .map(|p| {
                if train && p.kind == ParamKind::Trainable {
                    g.input(p.value.clone().requiring_grad())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { ids }
    }
}

/// Graph nodes holding a [`ParamStore`]'s entries, indexed like the store.
#[derive(Clone, Debug)]
pub struct Bound {
    pub ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, index: usize) -> NodeId {
        self.ids[index]
    }
}

struct Init<'a> {
    seed: u64,
    store: &'a mut ParamStore,
}

impl Init<'_> {
    fn normal(&mut self, name: String, shape: &[usize], mean: f64, std: f64) -> usize {
        let mut r = rng::stream(self.seed, &format!("init.{name}"), &[]);
        let dist = Normal::new(mean, std).expect("finite init parameters");
        let t = Tensor::from_fn(shape, |_| dist.sample(&mut r) as f32);
        self.store.push(name, t, ParamKind::Trainable)
    }

    fn fill(&mut self, name: String, shape: &[usize], value: f32, kind: ParamKind) -> usize {
        self.store.push(name, Tensor::full(shape, value), kind)
    }

    fn batchnorm(&mut self, prefix: &str, channels: usize) -> BatchNorm {
        BatchNorm {
            gamma: self.normal(format!("{prefix}.bn.gamma"), &[channels], 1.0, INIT_STD),
            beta: self.fill(format!("{prefix}.bn.beta"), &[channels], 0.0, ParamKind::Trainable),
            running_mean: self.fill(format!("{prefix}.bn.running_mean"), &[channels], 0.0, ParamKind::Buffer),
            running_var: self.fill(format!("{prefix}.bn.running_var"), &[channels], 1.0, ParamKind::Buffer),
        }
    }
}

// ─── shared layer pieces ────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetMode {
    /// Batch statistics, dropout active.
    Train,
    /// Running statistics, dropout active (dropout testing).
    EvalStochastic,
    /// Running statistics, dropout bypassed.
    EvalDeterministic,
}

impl NetMode {
    fn dropout(self) -> DropoutMode {
        match self {
            NetMode::EvalDeterministic => DropoutMode::Deterministic,
            _ => DropoutMode::Stochastic,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct BatchNorm {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

impl BatchNorm {
    fn forward(&self, g: &mut Graph<f32>, b: &Bound, x: NodeId, mode: NetMode, trace: &mut Trace) -> Result<NodeId> {
        if mode == NetMode::Train {
            let y = g.batch_norm2d_train(x, b.id(self.gamma), b.id(self.beta), BN_EPS)?;
            trace.batchnorms.push((*self, y, g.value(x).numel() / g.value(x).shape()[1]));
            Ok(y)
        } else {
            g.batch_norm2d_eval(
                x,
                b.id(self.gamma),
                b.id(self.beta),
                b.id(self.running_mean),
                b.id(self.running_var),
                BN_EPS,
            )
        }
    }
}

/// Source of per-layer dropout streams for one forward pass.
#[derive(Clone, Debug)]
pub struct DropoutNoise {
    pub seed: u64,
    pub purpose: &'static str,
    pub index: Vec<u64>,
}

impl DropoutNoise {
    pub fn new(seed: u64, purpose: &'static str, index: &[u64]) -> Self {
        Self { seed, purpose, index: index.to_vec() }
    }

    fn layer(&self, layer: usize) -> StreamRng {
        let mut idx = self.index.clone();
        idx.push(layer as u64);
        rng::stream(self.seed, self.purpose, &idx)
    }
}

/// Nodes of one forward pass that the trainer needs after the fact.
#[derive(Debug, Default)]
pub struct Trace {
    pub output: Option<NodeId>,
    batchnorms: Vec<(BatchNorm, NodeId, usize)>,
}

impl Trace {
    pub fn output(&self) -> NodeId {
        self.output.expect("forward pass completed")
    }
}

/// Folds the batch statistics recorded in `trace` into the running buffers
/// (`momentum` 0.1, unbiased variance).
pub fn update_running_stats(store: &mut ParamStore, g: &Graph<f32>, trace: &Trace) {
    for (bn, node, count) in &trace.batchnorms {
        let (mean, var) = g.batch_stats(*node).expect("training-mode batchnorm");
        let correction = if *count > 1 { *count as f64 / (*count as f64 - 1.0) } else { 1.0 };
        let m = BN_MOMENTUM;
        let rm = store.value_mut(bn.running_mean);
        for (r, &v) in rm.data_mut().iter_mut().zip(mean) {
            *r = ((1.0 - m) * *r as f64 + m * v as f64) as f32;
        }
        let rv = store.value_mut(bn.running_var);
        for (r, &v) in rv.data_mut().iter_mut().zip(var) {
            *r = ((1.0 - m) * *r as f64 + m * v as f64 * correction) as f32;
        }
    }
}

// ─── generator ──────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
struct EncoderBlock {
    weight: usize,
    bias: Option<usize>,
    bn: Option<BatchNorm>,
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    weight: usize,
    bn: BatchNorm,
    dropout: Option<DropoutLayer>,
}

#[derive(Clone, Copy, Debug)]
enum DropoutLayer {
    Concrete { logit_p: usize, channels: usize },
    MonteCarlo,
}

/// Concrete-dropout hyperparameters shared by every layer of a generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcreteHyper {
    pub temperature: f64,
    pub weight_reg_coeff: f64,
    pub dropout_reg_coeff: f64,
}

impl Default for ConcreteHyper {
    fn default() -> Self {
        Self { temperature: 0.1, weight_reg_coeff: 1e-6, dropout_reg_coeff: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct Generator {
    pub spec: GeneratorSpec,
    pub hyper: ConcreteHyper,
    pub params: ParamStore,
    encoder: Vec<EncoderBlock>,
    decoder: Vec<DecoderBlock>,
    head_weight: usize,
    head_bias: usize,
}

/// Summary of one concrete-dropout layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConcreteLayerInfo {
    pub position: usize,
    pub input_channels: usize,
    pub p: f64,
}

pub fn build_generator(spec: &GeneratorSpec, seed: u64) -> Result<Generator> {
    spec.validate()?;
    let mut params = ParamStore::default();
    let mut init = Init { seed, store: &mut params };
    let mut encoder = Vec::with_capacity(spec.levels);
    let mut in_ch = 1;
    for i in 1..=spec.levels {
        let out = spec.encoder_channels(i);
        let prefix = format!("gen.enc.{i}");
        let weight = init.normal(format!("{prefix}.weight"), &[out, in_ch, KERNEL, KERNEL], 0.0, INIT_STD);
        let (bias, bn) = if i == 1 {
            (Some(init.fill(format!("{prefix}.bias"), &[out], 0.0, ParamKind::Trainable)), None)
        } else {
            (None, Some(init.batchnorm(&prefix, out)))
        };
        encoder.push(EncoderBlock { weight, bias, bn });
        in_ch = out;
    }
    let mut decoder = Vec::with_capacity(spec.levels);
    for j in 1..=spec.levels {
        let (cin, out) = (spec.decoder_input_channels(j), spec.decoder_channels(j));
        let prefix = format!("gen.dec.{j}");
        let weight = init.normal(format!("{prefix}.weight"), &[cin, out, KERNEL, KERNEL], 0.0, INIT_STD);
        let bn = init.batchnorm(&prefix, out);
        let dropout = if !spec.has_dropout_at(j) {
            None
        } else if spec.dropout_kind == DropoutKind::Concrete {
            let logit_p = init.fill(format!("concrete.{j}.logit_p"), &[1], logit(spec.init_p) as f32, ParamKind::Trainable);
            Some(DropoutLayer::Concrete { logit_p, channels: out })
        } else {
            Some(DropoutLayer::MonteCarlo)
        };
        decoder.push(DecoderBlock { weight, bn, dropout });
    }
    let head_weight =
        init.normal("gen.head.weight".into(), &[1, spec.base_channels, HEAD_KERNEL, HEAD_KERNEL], 0.0, INIT_STD);
    let head_bias = init.fill("gen.head.bias".into(), &[1], 0.0, ParamKind::Trainable);
    Ok(Generator {
        spec: spec.clone(),
        hyper: ConcreteHyper::default(),
        params,
        encoder,
        decoder,
        head_weight,
        head_bias,
    })
}

impl Generator {
    fn concrete_params(&self, logit_p: usize, channels: usize) -> ConcreteDropoutParams {
        ConcreteDropoutParams {
            logit_p: self.params.get(logit_p).value.data()[0] as f64,
            temperature: self.hyper.temperature,
            weight_reg_coeff: self.hyper.weight_reg_coeff,
            dropout_reg_coeff: self.hyper.dropout_reg_coeff,
            input_channels: channels,
        }
    }

    /// Concrete layers in decoder order, with their current dropout probabilities.
    pub fn concrete_layers(&self) -> Vec<ConcreteLayerInfo> {
        self.decoder
            .iter()
            .enumerate()
            .filter_map(|(j, block)| match block.dropout {
                Some(DropoutLayer::Concrete { logit_p, channels }) => Some(ConcreteLayerInfo {
                    position: j + 1,
                    input_channels: channels,
                    p: self.concrete_params(logit_p, channels).p(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn dropout_layer_count(&self) -> usize {
        self.decoder.iter().filter(|b| b.dropout.is_some()).count()
    }

    /// Forward pass on a `batch × 1 × size × size` input node.
    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        b: &Bound,
        x: NodeId,
        mode: NetMode,
        noise: &DropoutNoise,
    ) -> Result<Trace> {
        let shape = g.value(x).shape().to_vec();
        let size = self.spec.input_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != size || shape[3] != size {
            return Err(Error::shape("generator", format!("expected [B, 1, {size}, {size}], got {shape:?}")));
        }
        let mut trace = Trace::default();
        let mut skips = Vec::with_capacity(self.spec.levels);
        let mut h = x;
        for block in &self.encoder {
            h = g.conv2d(h, b.id(block.weight), block.bias.map(|i| b.id(i)), 2, 1)?;
            if let Some(bn) = &block.bn {
                h = bn.forward(g, b, h, mode, &mut trace)?;
            }
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
            skips.push(h);
        }
        let mc = BernoulliDropoutParams::new(self.spec.mc_rate)?;
        for (idx, block) in self.decoder.iter().enumerate() {
            let j = idx + 1;
            let skip = skips[self.spec.levels - j];
            let input = if j == 1 { skip } else { g.concat_channels(&[h, skip])? };
            h = g.conv_transpose2d(input, b.id(block.weight), None, 2, 1)?;
            h = block.bn.forward(g, b, h, mode, &mut trace)?;
            h = g.relu(h)?;
            match block.dropout {
                Some(DropoutLayer::Concrete { logit_p, channels }) => {
                    let params = self.concrete_params(logit_p, channels);
                    let mut r = noise.layer(j);
                    h = concrete_apply(g, h, b.id(logit_p), &params, &mut r, mode.dropout(), self.spec.mask_granularity)?;
                }
                Some(DropoutLayer::MonteCarlo) => {
                    let mut r = noise.layer(j);
                    h = mc_dropout_apply(g, h, &mc, &mut r, mode.dropout(), self.spec.mask_granularity)?;
                }
                None => {}
            }
        }
        h = g.conv2d(h, b.id(self.head_weight), Some(b.id(self.head_bias)), 1, 1)?;
        h = g.tanh(h)?;
        h = g.add_scalar(h, 1.0)?;
        trace.output = Some(g.scalar_mul(h, 0.5)?);
        Ok(trace)
    }

    /// Sum of the concrete regularizers, each using the transposed-conv
    /// weights that feed its dropout layer. A zero constant when there are
    /// no concrete layers.
    pub fn collect_regularizers(&self, g: &mut Graph<f32>, b: &Bound) -> Result<NodeId> {
        let mut total: Option<NodeId> = None;
        for block in &self.decoder {
            if let Some(DropoutLayer::Concrete { logit_p, channels }) = block.dropout {
                let params = self.concrete_params(logit_p, channels);
                let r = concrete_regularizer_node(g, b.id(logit_p), b.id(block.weight), &params)?;
                total = Some(match total {
                    Some(t) => g.add(t, r)?,
                    None => r,
                });
            }
        }
        match total {
            Some(t) => Ok(t),
            None => Ok(g.constant(Tensor::scalar(0.0))),
        }
    }

    /// Runs a forward pass on plain data and returns the output tensor.
    pub fn predict(&self, x: &Tensor<f32>, mode: NetMode, noise: &DropoutNoise) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let xi = g.constant(x.clone());
        let trace = self.forward(&mut g, &b, xi, mode, noise)?;
        Ok(g.value(trace.output()).clone())
    }
}

// ─── discriminator ──────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
struct DiscLayer {
    weight: usize,
    bias: Option<usize>,
    bn: Option<BatchNorm>,
    stride: usize,
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub spec: DiscriminatorSpec,
    pub params: ParamStore,
    layers: Vec<DiscLayer>,
}

pub fn build_discriminator(spec: &DiscriminatorSpec, seed: u64) -> Result<Discriminator> {
    spec.validate()?;
    let mut params = ParamStore::default();
    let mut init = Init { seed, store: &mut params };
    let mut layers = Vec::with_capacity(DiscriminatorSpec::CONV_LAYERS);
    let mut in_ch = spec.input_channels;
    for i in 1..=DiscriminatorSpec::CONV_LAYERS {
        let out = spec.layer_channels(i);
        let prefix = format!("disc.{i}");
        let weight = init.normal(format!("{prefix}.weight"), &[out, in_ch, KERNEL, KERNEL], 0.0, INIT_STD);
        let edge = i == 1 || i == DiscriminatorSpec::CONV_LAYERS;
        let bias = edge.then(|| init.fill(format!("{prefix}.bias"), &[out], 0.0, ParamKind::Trainable));
        let bn = (!edge).then(|| init.batchnorm(&prefix, out));
        layers.push(DiscLayer { weight, bias, bn, stride: DiscriminatorSpec::STRIDES[i - 1] });
        in_ch = out;
    }
    Ok(Discriminator { spec: spec.clone(), params, layers })
}

impl Discriminator {
    /// Patch logits for a channel-concatenated `(source, target)` batch.
    pub fn forward(&self, g: &mut Graph<f32>, b: &Bound, pair: NodeId, mode: NetMode) -> Result<Trace> {
        let shape = g.value(pair).shape();
        if shape.len() != 4 || shape[1] != self.spec.input_channels {
            return Err(Error::shape(
                "discriminator",
                format!("expected {} input channels, got {shape:?}", self.spec.input_channels),
            ));
        }
        let mut trace = Trace::default();
        let mut h = pair;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = g.conv2d(h, b.id(layer.weight), layer.bias.map(|k| b.id(k)), layer.stride, 1)?;
            if let Some(bn) = &layer.bn {
                h = bn.forward(g, b, h, mode, &mut trace)?;
            }
            if i != last {
                h = g.leaky_relu(h, LEAKY_SLOPE)?;
            }
        }
        trace.output = Some(h);
        Ok(trace)
    }
}

