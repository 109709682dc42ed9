//! Desk-scale synthesizer: token sequences in, feature frames out.
//!
//! Targets come from a fixed smooth function of (token, frame position,
//! attribute profile). Models are small per-frame tanh MLPs stored as
//! checkpoints, so they can be merged like any other weights.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor_store::{Checkpoint, Tensor};

/// Seed of the per-(token, channel) frequency/phase table shared by every
/// dataset, template and statistic in the toolkit.
pub const FEATURE_TABLE_SEED: u64 = 0x6d65_7267_656c_6162;
const OMEGA_MIN: f64 = 0.05;
const OMEGA_MAX: f64 = 0.4;

pub const STEP_COUNT: &str = "step_count";
pub const EMBEDDING: &str = "embedding.weight";
pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";
pub const META_PROFILE_ID: &str = "train.profile_id";
pub const META_PARENT: &str = "train.parent_fingerprint";
pub const META_FINAL_MSE: &str = "train.final_mse";

fn layer_weight(i: usize) -> String {
    format!("layers.{i}.weight")
}

fn layer_bias(i: usize) -> String {
    format!("layers.{i}.bias")
}

/// Synthetic attribute identity (speaker or emotion style analog).
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeProfile {
    pub profile_id: String,
    /// Amplitude of the token carrier, the pitch analog.
    pub pitch_base: f64,
    /// Linear slope across channels, the spectral-tilt analog.
    pub tilt: f64,
    /// Constant offset on every channel.
    pub energy: f64,
}

impl AttributeProfile {
    pub fn new(id: impl Into<String>, pitch_base: f64, tilt: f64, energy: f64) -> Self {
        Self {
            profile_id: id.into(),
            pitch_base,
            tilt,
            energy,
        }
    }

    /// Field-wise average; used for attribute-neutral decoding templates.
    pub fn midpoint(a: &Self, b: &Self) -> Self {
        Self {
            profile_id: format!("mid({},{})", a.profile_id, b.profile_id),
            pitch_base: 0.5 * (a.pitch_base + b.pitch_base),
            tilt: 0.5 * (a.tilt + b.tilt),
            energy: 0.5 * (a.energy + b.energy),
        }
    }

    /// Largest absolute difference over the three attribute fields.
    pub fn separation(&self, other: &Self) -> f64 {
        (self.pitch_base - other.pitch_base)
            .abs()
            .max((self.tilt - other.tilt).abs())
            .max((self.energy - other.energy).abs())
    }

    /// Errors unless the two profiles are at least `min` apart in some field.
    pub fn check_separation(&self, other: &Self, min: f64) -> Result<()> {
        let sep = self.separation(other);
        if sep < min {
            return Err(Error::InvalidSpec(format!(
                "profiles `{}` and `{}` differ by {sep}, need at least {min}",
                self.profile_id, other.profile_id
            )));
        }
        Ok(())
    }
}

/// Frequencies and phases of the target carrier, one per (token, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    vocab_size: usize,
    feature_dim: usize,
    omega: Vec<f64>,
    phase: Vec<f64>,
}

impl FeatureTable {
    pub fn new(vocab_size: usize, feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = vocab_size * feature_dim;
        let omega = (0..n)
            .map(|_| OMEGA_MIN + (OMEGA_MAX - OMEGA_MIN) * rng.random::<f64>())
            .collect();
        let phase = (0..n).map(|_| 2.0 * PI * rng.random::<f64>()).collect();
        Self {
            vocab_size,
            feature_dim,
            omega,
            phase,
        }
    }

    pub fn standard(vocab_size: usize, feature_dim: usize) -> Self {
        Self::new(vocab_size, feature_dim, FEATURE_TABLE_SEED)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Profile-free carrier `sin(omega * j + phase)`.
    pub fn carrier(&self, token: usize, position: usize, channel: usize) -> f64 {
        let k = token * self.feature_dim + channel;
        (self.omega[k] * position as f64 + self.phase[k]).sin()
    }

    pub fn value(
        &self,
        token: usize,
        position: usize,
        channel: usize,
        profile: &AttributeProfile,
    ) -> f64 {
        profile.pitch_base * self.carrier(token, position, channel)
            + profile.tilt * (channel as f64 / self.feature_dim as f64)
            + profile.energy
    }

    pub fn frame(&self, token: usize, position: usize, profile: &AttributeProfile) -> Vec<f64> {
        (0..self.feature_dim)
            .map(|c| self.value(token, position, c, profile))
            .collect()
    }

    /// Target frames for a token sequence.
    pub fn render(&self, tokens: &[usize], profile: &AttributeProfile) -> FrameMatrix {
        let mut out = FrameMatrix::zeros(tokens.len(), self.feature_dim);
        for (j, &t) in tokens.iter().enumerate() {
            for c in 0..self.feature_dim {
                out.set(j, c, self.value(t, j, c, profile));
            }
        }
        out
    }
}

/// Row-major `rows x cols` matrix of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged frame rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn get(&self, j: usize, c: usize) -> f64 {
        self.data[j * self.cols + c]
    }

    pub fn set(&mut self, j: usize, c: usize, v: f64) {
        self.data[j * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Sentence sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentSpec {
    pub vocab_size: usize,
    pub sentence_length: usize,
    pub num_sentences: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl ContentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::InvalidSpec(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if self.sentence_length == 0 {
            return Err(Error::InvalidSpec(
                "sentence_length must be at least 1".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidSpec("feature_dim must be at least 1".into()));
        }
        Ok(())
    }

    /// Uniformly random token sentences, reproducible from `seed`.
    pub fn sentences(&self) -> Result<Vec<Vec<usize>>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Ok((0..self.num_sentences)
            .map(|_| {
                (0..self.sentence_length)
                    .map(|_| rng.random_range(0..self.vocab_size))
                    .collect()
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub tokens: Vec<usize>,
    pub targets: FrameMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub profile_id: String,
    pub feature_dim: usize,
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    /// Both datasets' items, `self` first; used for mixed-profile pretraining.
    pub fn mixed(&self, other: &Dataset) -> Result<Dataset> {
        if self.feature_dim != other.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "feature_dim {} vs {}",
                self.feature_dim, other.feature_dim
            )));
        }
        let mut items = self.items.clone();
        items.extend(other.items.iter().cloned());
        Ok(Dataset {
            profile_id: format!("{}+{}", self.profile_id, other.profile_id),
            feature_dim: self.feature_dim,
            items,
        })
    }

    pub fn sentences(&self) -> Vec<Vec<usize>> {
        self.items.iter().map(|i| i.tokens.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Samples sentences from `content` and renders their targets under `profile`.
pub fn generate_dataset(profile: &AttributeProfile, content: &ContentSpec) -> Result<Dataset> {
    let table = FeatureTable::standard(content.vocab_size, content.feature_dim);
    let items = content
        .sentences()?
        .into_iter()
        .map(|tokens| {
            let targets = table.render(&tokens, profile);
            DatasetItem { tokens, targets }
        })
        .collect();
    Ok(Dataset {
        profile_id: profile.profile_id.clone(),
        feature_dim: content.feature_dim,
        items,
    })
}

/// Network shape plus the init seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    /// Number of affine + tanh layers before the output projection.
    pub num_layers: usize,
    pub init_seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            embed_dim: 16,
            hidden_dim: 32,
            feature_dim: 8,
            num_layers: 2,
            init_seed: 0,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("feature_dim", self.feature_dim),
            ("num_layers", self.num_layers),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Recovers the shape of a toy checkpoint (`init_seed` is reported as 0).
    pub fn infer(model: &Checkpoint) -> Result<Self> {
        let net = Net::from_checkpoint(model)?;
        Ok(Self {
            vocab_size: net.vocab_size,
            embed_dim: net.embed_dim,
            hidden_dim: net.layers[0].outputs,
            feature_dim: net.head.outputs,
            num_layers: net.layers.len(),
            init_seed: 0,
        })
    }
}

#[derive(Debug, Clone)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn zeros_like(&self) -> Self {
        Self {
            inputs: self.inputs,
            outputs: self.outputs,
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *slot = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn load(cp: &Checkpoint, weight: &str, bias: &str) -> Result<Self> {
        let w = cp.tensor(weight)?;
        let b = cp.tensor(bias)?;
        let (outputs, inputs) = match *w.shape() {
            [o, i] => (o, i),
            ref s => {
                return Err(Error::ShapeMismatch(format!(
                    "`{weight}` must be 2-D, got {s:?}"
                )))
            }
        };
        if b.shape() != [outputs] {
            return Err(Error::ShapeMismatch(format!(
                "`{bias}` has shape {:?}, expected [{outputs}]",
                b.shape()
            )));
        }
        if !w.dtype().is_float() || !b.dtype().is_float() {
            return Err(Error::ShapeMismatch(format!(
                "`{weight}`/`{bias}` must be float"
            )));
        }
        Ok(Self {
            inputs,
            outputs,
            weight: w.to_f64_vec(),
            bias: b.to_f64_vec(),
        })
    }
}

/// In-memory, 64-bit copy of a toy checkpoint's parameters.
#[derive(Debug, Clone)]
struct Net {
    vocab_size: usize,
    embed_dim: usize,
    embedding: Vec<f64>,
    layers: Vec<Dense>,
    head: Dense,
    /// Sinusoidal encoding, grown on demand to the longest sentence seen.
    positions: Vec<Vec<f64>>,
}

fn position_encoding(position: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2 * 2) as f64;
            let angle = position as f64 / 10000f64.powf(pair / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Activations of one frame, kept for backpropagation.
struct Trace {
    input: Vec<f64>,
    hidden: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl Net {
    fn from_checkpoint(cp: &Checkpoint) -> Result<Self> {
        let emb = cp.tensor(EMBEDDING)?;
        let (vocab_size, embed_dim) = match *emb.shape() {
            [v, e] => (v, e),
            ref s => {
                return Err(Error::ShapeMismatch(format!(
                    "`{EMBEDDING}` must be 2-D, got {s:?}"
                )))
            }
        };
        let mut layers = Vec::new();
        while cp.get(&layer_weight(layers.len())).is_some() {
            let i = layers.len();
            layers.push(Dense::load(cp, &layer_weight(i), &layer_bias(i))?);
        }
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("model has no hidden layers".into()));
        }
        let head = Dense::load(cp, HEAD_WEIGHT, HEAD_BIAS)?;
        let mut expected = embed_dim;
        for (i, layer) in layers.iter().chain(std::iter::once(&head)).enumerate() {
            if layer.inputs != expected {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} expects {} inputs but receives {expected}",
                    layer.inputs
                )));
            }
            expected = layer.outputs;
        }
        Ok(Self {
            vocab_size,
            embed_dim,
            embedding: emb.to_f64_vec(),
            layers,
            head,
            positions: Vec::new(),
        })
    }

    fn ensure_positions(&mut self, len: usize) {
        while self.positions.len() < len {
            let j = self.positions.len();
            self.positions.push(position_encoding(j, self.embed_dim));
        }
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn forward_frame(&self, token: usize, position: usize) -> Trace {
        let e = &self.embedding[token * self.embed_dim..(token + 1) * self.embed_dim];
        let input: Vec<f64> = e
            .iter()
            .zip(&self.positions[position])
            .map(|(a, b)| a + b)
            .collect();
        let mut hidden = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = hidden.last().unwrap_or(&input);
            let mut z = vec![0.0; layer.outputs];
            layer.apply(x, &mut z);
            z.iter_mut().for_each(|v| *v = v.tanh());
            hidden.push(z);
        }
        let mut output = vec![0.0; self.head.outputs];
        self.head.apply(hidden.last().unwrap(), &mut output);
        Trace {
            input,
            hidden,
            output,
        }
    }

    fn forward(&mut self, tokens: &[usize]) -> Result<FrameMatrix> {
        self.check_tokens(tokens)?;
        self.ensure_positions(tokens.len());
        let mut out = FrameMatrix::zeros(tokens.len(), self.head.outputs);
        for (j, &t) in tokens.iter().enumerate() {
            let trace = self.forward_frame(t, j);
            out.data[j * out.cols..(j + 1) * out.cols].copy_from_slice(&trace.output);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients for one frame given `d loss / d output`.
    fn backward(&self, token: usize, trace: &Trace, d_out: &[f64], grads: &mut Grads) {
        accumulate(&mut grads.head, d_out, trace.hidden.last().unwrap());
        let mut d_h = transpose_mul(&self.head, d_out);
        for l in (0..self.layers.len()).rev() {
            let h = &trace.hidden[l];
            let d_z: Vec<f64> = d_h.iter().zip(h).map(|(g, v)| g * (1.0 - v * v)).collect();
            let x = if l == 0 {
                &trace.input
            } else {
                &trace.hidden[l - 1]
            };
            accumulate(&mut grads.layers[l], &d_z, x);
            d_h = transpose_mul(&self.layers[l], &d_z);
        }
        let row = &mut grads.embedding[token * self.embed_dim..(token + 1) * self.embed_dim];
        row.iter_mut().zip(&d_h).for_each(|(g, d)| *g += d);
    }

    fn apply_gradients(&mut self, grads: &Grads, lr: f64) {
        let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(p, g)| *p -= lr * g);
        step(&mut self.embedding, &grads.embedding);
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            step(&mut layer.weight, &g.weight);
            step(&mut layer.bias, &g.bias);
        }
        step(&mut self.head.weight, &grads.head.weight);
        step(&mut self.head.bias, &grads.head.bias);
    }

    /// Writes parameters back over `template`'s float tensors (rounded to
    /// their stored dtype).
    fn store(&self, template: &Checkpoint) -> Result<Checkpoint> {
        let mut cp = template.clone();
        let put = |cp: &mut Checkpoint, name: &str, values: &[f64]| -> Result<()> {
            let old = cp.tensor(name)?;
            let t = match old.dtype() {
                crate::DType::F32 => Tensor::from_f32(
                    old.shape().to_vec(),
                    &values.iter().map(|&v| v as f32).collect::<Vec<_>>(),
                )?,
                _ => Tensor::from_f64(old.shape().to_vec(), values)?,
            };
            cp.replace(name, t)
        };
        put(&mut cp, EMBEDDING, &self.embedding)?;
        for (i, layer) in self.layers.iter().enumerate() {
            put(&mut cp, &layer_weight(i), &layer.weight)?;
            put(&mut cp, &layer_bias(i), &layer.bias)?;
        }
        put(&mut cp, HEAD_WEIGHT, &self.head.weight)?;
        put(&mut cp, HEAD_BIAS, &self.head.bias)?;
        Ok(cp)
    }
}

fn accumulate(g: &mut Dense, d_out: &[f64], x: &[f64]) {
    for (o, &d) in d_out.iter().enumerate() {
        g.bias[o] += d;
        let row = &mut g.weight[o * g.inputs..(o + 1) * g.inputs];
        row.iter_mut().zip(x).for_each(|(w, v)| *w += d * v);
    }
}

fn transpose_mul(layer: &Dense, d_out: &[f64]) -> Vec<f64> {
    let mut d_in = vec![0.0; layer.inputs];
    for (o, &d) in d_out.iter().enumerate() {
        let row = &layer.weight[o * layer.inputs..(o + 1) * layer.inputs];
        d_in.iter_mut().zip(row).for_each(|(acc, w)| *acc += d * w);
    }
    d_in
}

struct Grads {
    embedding: Vec<f64>,
    layers: Vec<Dense>,
    head: Dense,
}

impl Grads {
    fn for_net(net: &Net) -> Self {
        Self {
            embedding: vec![0.0; net.embedding.len()],
            layers: net.layers.iter().map(Dense::zeros_like).collect(),
            head: net.head.zeros_like(),
        }
    }

    fn reset(&mut self) {
        self.embedding.iter_mut().for_each(|v| *v = 0.0);
        for l in self
            .layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
        {
            l.weight.iter_mut().for_each(|v| *v = 0.0);
            l.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, stored as F32,
/// plus an I64 `step_count` of zero. The embedding's fan-in is the vocabulary
/// size (it is a linear map from one-hot tokens).
pub fn init_model(config: &ToyModelConfig) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
    let mut uniform = |shape: Vec<usize>, fan_in: usize| -> Result<Tensor> {
        let s = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let values: Vec<f32> = (0..n)
            .map(|_| ((2.0 * rng.random::<f64>() - 1.0) * s) as f32)
            .collect();
        Tensor::from_f32(shape, &values)
    };

    let mut cp = Checkpoint::new();
    cp.insert(
        EMBEDDING,
        uniform(vec![config.vocab_size, config.embed_dim], config.vocab_size)?,
    )?;
    let mut inputs = config.embed_dim;
    for i in 0..config.num_layers {
        cp.insert(
            layer_weight(i),
            uniform(vec![config.hidden_dim, inputs], inputs)?,
        )?;
        cp.insert(layer_bias(i), uniform(vec![config.hidden_dim], inputs)?)?;
        inputs = config.hidden_dim;
    }
    cp.insert(
        HEAD_WEIGHT,
        uniform(vec![config.feature_dim, inputs], inputs)?,
    )?;
    cp.insert(HEAD_BIAS, uniform(vec![config.feature_dim], inputs)?)?;
    cp.insert(STEP_COUNT, Tensor::from_i64(vec![1], &[0])?)?;
    Ok(cp)
}

/// Output frames of `model` for one token sequence.
pub fn forward(model: &Checkpoint, tokens: &[usize]) -> Result<FrameMatrix> {
    Net::from_checkpoint(model)?.forward(tokens)
}

/// Output frames for many sentences, parsing the model once.
pub fn forward_batch(model: &Checkpoint, sentences: &[Vec<usize>]) -> Result<Vec<FrameMatrix>> {
    let mut net = Net::from_checkpoint(model)?;
    sentences.iter().map(|s| net.forward(s)).collect()
}

/// Mean squared error of `model` over every frame and channel of `dataset`.
pub fn mse(model: &Checkpoint, dataset: &Dataset) -> Result<f64> {
    let mut net = Net::from_checkpoint(model)?;
    if net.head.outputs != dataset.feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "model emits {} channels, dataset has {}",
            net.head.outputs, dataset.feature_dim
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for item in &dataset.items {
        let out = net.forward(&item.tokens)?;
        total += out
            .as_slice()
            .iter()
            .zip(item.targets.as_slice())
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>();
        count += out.as_slice().len();
    }
    Ok(if count == 0 {
        0.0
    } else {
        total / count as f64
    })
}

pub fn step_count(model: &Checkpoint) -> Result<i64> {
    model
        .tensor(STEP_COUNT)?
        .to_i64_vec()
        .and_then(|v| v.first().copied())
        .ok_or_else(|| Error::ShapeMismatch(format!("`{STEP_COUNT}` must be a non-empty I64")))
}

/// One gradient-descent job: `init` trained on `dataset`.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub init: Checkpoint,
    pub dataset: Dataset,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Sentences per mini-batch.
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub steps: u64,
    /// MSE over the whole dataset after the last step.
    pub final_mse: f64,
}

/// Mini-batch gradient descent on frame MSE. Single-threaded with a fixed
/// iteration order, so results are bit-reproducible.
pub fn train(run: &TrainingRun) -> Result<TrainOutcome> {
    if run.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let mut net = Net::from_checkpoint(&run.init)?;
    let feature_dim = net.head.outputs;
    if run.dataset.feature_dim != feature_dim {
        return Err(Error::ShapeMismatch(format!(
            "model emits {feature_dim} channels, dataset has {}",
            run.dataset.feature_dim
        )));
    }
    let mut max_len = 0;
    for item in &run.dataset.items {
        net.check_tokens(&item.tokens)?;
        if item.targets.rows() != item.tokens.len() || item.targets.cols() != feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "target matrix {}x{} does not match {} tokens x {feature_dim} channels",
                item.targets.rows(),
                item.targets.cols(),
                item.tokens.len()
            )));
        }
        max_len = max_len.max(item.tokens.len());
    }
    net.ensure_positions(max_len);
    let start_steps = step_count(&run.init)?;

    let mut rng = ChaCha8Rng::seed_from_u64(run.shuffle_seed);
    let mut order: Vec<usize> = (0..run.dataset.len()).collect();
    let mut grads = Grads::for_net(&net);
    let mut d_out = vec![0.0; feature_dim];
    let mut steps = 0u64;
    for epoch in 0..run.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(run.batch_size) {
            grads.reset();
            let frames: usize = batch
                .iter()
                .map(|&i| run.dataset.items[i].tokens.len())
                .sum();
            let scale = 2.0 / (frames * feature_dim).max(1) as f64;
            let mut loss = 0.0;
            for &i in batch {
                let item = &run.dataset.items[i];
                for (j, &t) in item.tokens.iter().enumerate() {
                    let trace = net.forward_frame(t, j);
                    for (c, slot) in d_out.iter_mut().enumerate() {
                        let err = trace.output[c] - item.targets.get(j, c);
                        loss += err * err;
                        *slot = scale * err;
                    }
                    net.backward(t, &trace, &d_out, &mut grads);
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step: steps });
            }
            net.apply_gradients(&grads, run.learning_rate);
            steps += 1;
        }
    }

    let mut checkpoint = if steps == 0 {
        run.init.clone()
    } else {
        net.store(&run.init)?
    };
    checkpoint.replace(
        STEP_COUNT,
        Tensor::from_i64(vec![1], &[start_steps + steps as i64])?,
    )?;
    let final_mse = mse(&checkpoint, &run.dataset)?;
    if !final_mse.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: run.epochs,
            step: steps,
        });
    }
    checkpoint.clear_metadata();
    checkpoint.set_metadata(META_PROFILE_ID, run.dataset.profile_id.clone());
    checkpoint.set_metadata(META_PARENT, run.init.content_digest());
    checkpoint.set_metadata(META_FINAL_MSE, format!("{final_mse:e}"));
    Ok(TrainOutcome {
        checkpoint,
        steps,
        final_mse,
    })
}

/// Least-squares amplitude of the model output on the profile-free carrier,
/// averaged over channels: recovers `pitch_base` for a model that matches its
/// targets.
pub fn pitch_statistic(model: &Checkpoint, sentences: &[Vec<usize>]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::EmptySentenceSet);
    }
    let config = ToyModelConfig::infer(model)?;
    let table = FeatureTable::standard(config.vocab_size, config.feature_dim);
    let outputs = forward_batch(model, sentences)?;
    let mut slopes = 0.0;
    for c in 0..config.feature_dim {
        let pairs: Vec<(f64, f64)> = sentences
            .iter()
            .zip(&outputs)
            .flat_map(|(tokens, out)| {
                tokens
                    .iter()
                    .enumerate()
                    .map(move |(j, &t)| (out.get(j, c), (j, t)))
            })
            .map(|(y, (j, t))| (y, table.carrier(t, j, c)))
            .collect();
        let n = pairs.len() as f64;
        let (my, ms) = pairs
            .iter()
            .fold((0.0, 0.0), |(a, b), (y, s)| (a + y / n, b + s / n));
        let (cov, var) = pairs.iter().fold((0.0, 0.0), |(cv, vr), (y, s)| {
            (cv + (y - my) * (s - ms), vr + (s - ms) * (s - ms))
        });
        if var == 0.0 {
            return Err(Error::ZeroVector("carrier has no variance".into()));
        }
        slopes += cov / var;
    }
    Ok(slopes / config.feature_dim as f64)
}
