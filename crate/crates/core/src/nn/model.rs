//! Encoder, generator and discriminator wired over one [`ParamStore`].
//!
//! Parameter names:
//! - `enc.conv{i}.{w,b}`: image encoder, shared by both networks
//! - `gen.lstm{l}.{w_x,w_h,b}`, `gen.bn{l}.{gamma,beta,running_mean,running_var}`, `gen.head.{w,b}`
//! - `disc.*`: same layout as `gen.*` with a one-unit head
//! - `config.*`: scalar hyperparameters and preprocessing constants, so a
//!   checkpoint alone rebuilds the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scanpath::{Fixation, Scanpath};

use super::image::Image;
use super::layers::{
    bn_backward, bn_forward_eval, bn_forward_train, conv_backward, conv_forward, dense_backward, dense_forward,
    dropout_mask, lstm_backward, lstm_forward, BnStats, BnTape, ConvShape, ConvTape, LstmDims, LstmGradsMut,
    LstmState, LstmTape, LstmWeights,
};
use super::ops::{sigmoid, softplus};
use super::params::{Grads, ParamId, ParamStore};
use super::{NnError, StepOutput};

/// Width of one scanpath step: `(x, y, dt, eos)`.
pub const STEP_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output channels of each 3×3 stride-2 convolution.
    pub conv_channels: Vec<usize>,
    /// Appends two channels holding the pixel intensity times the normalized
    /// column and row coordinate, so pooled features keep spatial information.
    pub coord_channels: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            conv_channels: vec![16, 32, 64, 64],
            coord_channels: true,
        }
    }
}

impl EncoderConfig {
    pub fn feature_dim(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(0)
    }

    pub fn input_channels(&self) -> usize {
        3 + if self.coord_channels { 2 } else { 0 }
    }

    pub fn min_size(&self) -> usize {
        1 << self.conv_channels.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub eos_threshold: f64,
    /// Weight of the content loss in the generator objective.
    pub alpha: f64,
    /// Minimize `ln(1 - D(fake))` instead of `-ln D(fake)`.
    pub saturating_loss: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 2,
            dropout: 0.1,
            max_len: 64,
            eos_threshold: 0.5,
            alpha: 0.05,
            saturating_loss: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            layers: 2,
            dropout: 0.1,
        }
    }
}

/// Size images are resized to and the mean pixel subtracted afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputConfig {
    pub height: usize,
    pub width: usize,
    pub mean_pixel: [f64; 3],
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            mean_pixel: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub input: InputConfig,
    /// Weight of the newest batch in the running normalization statistics.
    pub bn_momentum: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            input: InputConfig::default(),
            bn_momentum: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        let g = &self.generator;
        let d = &self.discriminator;
        if self.encoder.conv_channels.is_empty() || self.encoder.conv_channels.contains(&0) {
            return bad("conv_channels must be nonempty and positive");
        }
        if g.hidden == 0 || g.layers == 0 || d.hidden == 0 || d.layers == 0 {
            return bad("hidden sizes and layer counts must be at least 1");
        }
        if !(0.0..1.0).contains(&g.dropout) || !(0.0..1.0).contains(&d.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(g.eos_threshold > 0.0 && g.eos_threshold < 1.0) {
            return bad("eos_threshold must lie in (0, 1)");
        }
        if g.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if !(g.alpha >= 0.0 && g.alpha.is_finite()) {
            return bad("alpha must be a finite nonnegative number");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("bn_momentum must lie in (0, 1]");
        }
        if self.input.height < self.encoder.min_size() || self.input.width < self.encoder.min_size() {
            return bad("input size is smaller than the encoder needs");
        }
        Ok(())
    }
}

/// Which recurrent network an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Net {
    Generator,
    Discriminator,
}

impl Net {
    pub fn prefix(self) -> &'static str {
        match self {
            Net::Generator => "gen.",
            Net::Discriminator => "disc.",
        }
    }
}

/// Forward-pass behavior of normalization and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    /// Normalize with batch statistics instead of running statistics.
    pub batch_stats: bool,
    pub dropout: bool,
}

impl Mode {
    pub const TRAIN: Mode = Mode {
        batch_stats: true,
        dropout: true,
    };
    pub const EVAL: Mode = Mode {
        batch_stats: false,
        dropout: false,
    };
    /// Running statistics with dropout noise, as used for sampling.
    pub const SAMPLE: Mode = Mode {
        batch_stats: false,
        dropout: true,
    };
}

#[derive(Debug, Clone)]
struct LstmIds {
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
    dims: LstmDims,
}

#[derive(Debug, Clone)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone)]
struct StackIds {
    lstm: Vec<LstmIds>,
    bn: Vec<BnIds>,
    head_w: ParamId,
    head_b: ParamId,
    hidden: usize,
    dropout: f64,
}

#[derive(Debug, Clone)]
struct Ids {
    conv: Vec<(ParamId, ParamId)>,
    gen: StackIds,
    disc: StackIds,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    ids: Ids,
}

#[derive(Debug, Clone)]
pub struct EncoderTape {
    convs: Vec<ConvTape>,
}

impl EncoderTape {
    /// Which rectified units are active, in layer order. The encoder is
    /// differentiable wherever this pattern is locally constant.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.convs.iter().flat_map(|c| c.out.iter().map(|&v| v > 0.0)).collect()
    }
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Vec<f64>,
    lstm: Vec<LstmTape>,
    bn: BnTape,
    mask: Option<Vec<f64>>,
}

/// Record of a batched recurrent forward pass.
#[derive(Debug, Clone)]
pub struct StackTape {
    /// Row offsets of each sample; `offsets[i]..offsets[i + 1]`.
    offsets: Vec<usize>,
    layers: Vec<LayerTape>,
    /// Final-layer outputs, one row of `hidden` values per step.
    out: Vec<f64>,
    /// Batch statistics per layer when normalizing with batch statistics.
    pub bn_stats: Vec<BnStats>,
}

#[derive(Debug, Clone)]
pub struct GeneratorBatch {
    pub stack: StackTape,
    raw: Vec<[f64; 4]>,
    /// Squashed outputs per sample.
    pub outputs: Vec<Vec<[f64; 4]>>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorBatch {
    pub stack: StackTape,
    pub scores: Vec<f64>,
}

fn uniform(n: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

fn squash(raw: [f64; 4]) -> [f64; 4] {
    [sigmoid(raw[0]), sigmoid(raw[1]), softplus(raw[2]), sigmoid(raw[3])]
}

/// Derivative of each squashing function, given its raw input and output.
fn squash_slope(raw: [f64; 4], out: [f64; 4]) -> [f64; 4] {
    [
        out[0] * (1.0 - out[0]),
        out[1] * (1.0 - out[1]),
        sigmoid(raw[2]),
        out[3] * (1.0 - out[3]),
    ]
}

fn take3(g: &mut Grads, a: ParamId, b: ParamId, c: ParamId) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    (
        std::mem::take(&mut g.data[a]),
        std::mem::take(&mut g.data[b]),
        std::mem::take(&mut g.data[c]),
    )
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = &config.encoder;
        let mut conv = Vec::new();
        let mut cin = enc.input_channels();
        for (i, &cout) in enc.conv_channels.iter().enumerate() {
            let bound = (6.0 / (cin * 9) as f64).sqrt();
            let w = store.add(
                &format!("enc.conv{i}.w"),
                &[cout, cin, 3, 3],
                uniform(cout * cin * 9, bound, &mut rng),
                true,
            );
            let b = store.add(&format!("enc.conv{i}.b"), &[cout], vec![0.0; cout], true);
            conv.push((w, b));
            cin = cout;
        }
        let f = enc.feature_dim();
        let g = &config.generator;
        let gen = Self::add_stack(&mut store, &mut rng, "gen", f, g.hidden, g.layers, g.dropout, STEP_DIM);
        let d = &config.discriminator;
        let disc = Self::add_stack(&mut store, &mut rng, "disc", f, d.hidden, d.layers, d.dropout, 1);
        let scalars: [(&str, Vec<f64>); 11] = [
            ("config.enc.coord_channels", vec![f64::from(u8::from(enc.coord_channels))]),
            ("config.gen.dropout", vec![g.dropout]),
            ("config.gen.max_len", vec![g.max_len as f64]),
            ("config.gen.eos_threshold", vec![g.eos_threshold]),
            ("config.gen.alpha", vec![g.alpha]),
            ("config.gen.saturating_loss", vec![f64::from(u8::from(g.saturating_loss))]),
            ("config.disc.dropout", vec![d.dropout]),
            ("config.bn_momentum", vec![config.bn_momentum]),
            ("config.input.height", vec![config.input.height as f64]),
            ("config.input.width", vec![config.input.width as f64]),
            ("config.input.mean_pixel", config.input.mean_pixel.to_vec()),
        ];
        for (name, v) in scalars {
            store.add(name, &[v.len()], v, false);
        }
        Ok(Self {
            config,
            store,
            ids: Ids { conv, gen, disc },
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn add_stack(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        feature_dim: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        out_dim: usize,
    ) -> StackIds {
        let mut lstm = Vec::new();
        let mut bn = Vec::new();
        let bound = 1.0 / (hidden as f64).sqrt();
        for l in 0..layers {
            let dims = if l == 0 {
                LstmDims {
                    static_dim: feature_dim,
                    input_dim: STEP_DIM,
                    hidden,
                }
            } else {
                LstmDims {
                    static_dim: 0,
                    input_dim: hidden,
                    hidden,
                }
            };
            let cols = dims.x_cols();
            let w_x = store.add(
                &format!("{prefix}.lstm{l}.w_x"),
                &[4 * hidden, cols],
                uniform(4 * hidden * cols, bound, rng),
                true,
            );
            let w_h = store.add(
                &format!("{prefix}.lstm{l}.w_h"),
                &[4 * hidden, hidden],
                uniform(4 * hidden * hidden, bound, rng),
                true,
            );
            let mut bias = vec![0.0; 4 * hidden];
            bias[hidden..2 * hidden].fill(1.0);
            let b = store.add(&format!("{prefix}.lstm{l}.b"), &[4 * hidden], bias, true);
            lstm.push(LstmIds { w_x, w_h, b, dims });
            bn.push(BnIds {
                gamma: store.add(&format!("{prefix}.bn{l}.gamma"), &[hidden], vec![1.0; hidden], true),
                beta: store.add(&format!("{prefix}.bn{l}.beta"), &[hidden], vec![0.0; hidden], true),
                mean: store.add(&format!("{prefix}.bn{l}.running_mean"), &[hidden], vec![0.0; hidden], false),
                var: store.add(&format!("{prefix}.bn{l}.running_var"), &[hidden], vec![1.0; hidden], false),
            });
        }
        let hb = (6.0 / (hidden + out_dim) as f64).sqrt();
        let head_w = store.add(
            &format!("{prefix}.head.w"),
            &[out_dim, hidden],
            uniform(out_dim * hidden, hb, rng),
            true,
        );
        let head_b = store.add(&format!("{prefix}.head.b"), &[out_dim], vec![0.0; out_dim], true);
        StackIds {
            lstm,
            bn,
            head_w,
            head_b,
            hidden,
            dropout,
        }
    }

    /// Rebuilds a model from checkpoint arrays. Optimizer accumulators
    /// (`acc.*`) and training counters (`train.*`) are ignored, so training
    /// checkpoints load as models.
    pub fn from_store(saved: &ParamStore) -> Result<Self, NnError> {
        let missing = |n: &str| NnError::Checkpoint(format!("missing array {n}"));
        let scalar = |n: &str| -> Result<f64, NnError> {
            saved
                .by_name(n)
                .and_then(|p| p.data.first().copied())
                .ok_or_else(|| missing(n))
        };
        let mut conv_channels = Vec::new();
        while let Some(p) = saved.by_name(&format!("enc.conv{}.w", conv_channels.len())) {
            conv_channels.push(p.shape[0]);
        }
        let stack = |prefix: &str| -> Result<(usize, usize), NnError> {
            let mut layers = 0;
            while saved.by_name(&format!("{prefix}.lstm{layers}.w_x")).is_some() {
                layers += 1;
            }
            let name = format!("{prefix}.lstm0.w_h");
            let hidden = saved.by_name(&name).ok_or_else(|| missing(&name))?.shape[1];
            Ok((hidden, layers))
        };
        let (g_hidden, g_layers) = stack("gen")?;
        let (d_hidden, d_layers) = stack("disc")?;
        let mean = saved
            .by_name("config.input.mean_pixel")
            .filter(|p| p.data.len() == 3)
            .ok_or_else(|| missing("config.input.mean_pixel"))?;
        let config = ModelConfig {
            encoder: EncoderConfig {
                conv_channels,
                coord_channels: scalar("config.enc.coord_channels")? != 0.0,
            },
            generator: GeneratorConfig {
                hidden: g_hidden,
                layers: g_layers,
                dropout: scalar("config.gen.dropout")?,
                max_len: scalar("config.gen.max_len")? as usize,
                eos_threshold: scalar("config.gen.eos_threshold")?,
                alpha: scalar("config.gen.alpha")?,
                saturating_loss: scalar("config.gen.saturating_loss")? != 0.0,
            },
            discriminator: DiscriminatorConfig {
                hidden: d_hidden,
                layers: d_layers,
                dropout: scalar("config.disc.dropout")?,
            },
            input: InputConfig {
                height: scalar("config.input.height")? as usize,
                width: scalar("config.input.width")? as usize,
                mean_pixel: [mean.data[0], mean.data[1], mean.data[2]],
            },
            bn_momentum: scalar("config.bn_momentum")?,
        };
        let mut model = Model::new(config, 0)?;
        let loaded = model.store.load_from(saved)?;
        let model_arrays = saved
            .iter()
            .filter(|p| !p.name.starts_with("acc.") && !p.name.starts_with("train."))
            .count();
        if loaded != model.store.len() || loaded != model_arrays {
            return Err(NnError::Checkpoint(format!(
                "checkpoint has {model_arrays} model arrays, model expects {}",
                model.store.len()
            )));
        }
        if !model.store.all_finite() {
            return Err(NnError::Checkpoint("non-finite parameter".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), NnError> {
        self.store.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, NnError> {
        Self::from_store(&ParamStore::load(path)?)
    }

    /// Writes the preprocessing constants into both the config and the store.
    pub fn set_input(&mut self, input: InputConfig) {
        let id = |s: &Self, n: &str| s.store.id(n).expect("config array");
        let h = id(self, "config.input.height");
        self.store.get_mut(h)[0] = input.height as f64;
        let w = id(self, "config.input.width");
        self.store.get_mut(w)[0] = input.width as f64;
        let m = id(self, "config.input.mean_pixel");
        self.store.get_mut(m).copy_from_slice(&input.mean_pixel);
        self.config.input = input;
    }

    pub fn feature_dim(&self) -> usize {
        self.config.encoder.feature_dim()
    }

    /// Resizes to the configured input size and subtracts the mean pixel.
    pub fn prepare_image(&self, img: &Image) -> Image {
        let mut out = img.resize(self.config.input.height, self.config.input.width);
        out.subtract_mean(&self.config.input.mean_pixel);
        out
    }

    fn stack_ids(&self, net: Net) -> &StackIds {
        match net {
            Net::Generator => &self.ids.gen,
            Net::Discriminator => &self.ids.disc,
        }
    }

    fn lstm_weights(&self, l: &LstmIds) -> LstmWeights<'_> {
        LstmWeights {
            w_x: self.store.get(l.w_x),
            w_h: self.store.get(l.w_h),
            b: self.store.get(l.b),
        }
    }

    // -- encoder ------------------------------------------------------------

    fn encoder_input(&self, img: &Image) -> Result<(Vec<f64>, usize, usize), NnError> {
        let enc = &self.config.encoder;
        if img.channels != 3 {
            return Err(NnError::ShapeMismatch(format!("expected 3 channels, got {}", img.channels)));
        }
        let (h, w) = (img.height, img.width);
        if h < enc.min_size() || w < enc.min_size() {
            return Err(NnError::ImageTooSmall {
                height: h,
                width: w,
                min: enc.min_size(),
            });
        }
        let mut data = img.data.clone();
        if enc.coord_channels {
            let n = h * w;
            let mut cx = vec![0.0; n];
            let mut cy = vec![0.0; n];
            for y in 0..h {
                let yc = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0;
                for x in 0..w {
                    let xc = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
                    let i = y * w + x;
                    let m = (img.data[i] + img.data[n + i] + img.data[2 * n + i]) / 3.0;
                    cx[i] = m * xc;
                    cy[i] = m * yc;
                }
            }
            data.extend_from_slice(&cx);
            data.extend_from_slice(&cy);
        }
        Ok((data, h, w))
    }

    pub fn encode_with_tape(&self, img: &Image) -> Result<(Vec<f64>, EncoderTape), NnError> {
        let (mut x, mut h, mut w) = self.encoder_input(img)?;
        let mut cin = self.config.encoder.input_channels();
        let mut convs = Vec::with_capacity(self.ids.conv.len());
        for (&(wid, bid), &cout) in self.ids.conv.iter().zip(&self.config.encoder.conv_channels) {
            let shape = ConvShape { cin, cout, h, w };
            let tape = conv_forward(self.store.get(wid), self.store.get(bid), &x, shape);
            x = tape.out.clone();
            h = shape.out_h();
            w = shape.out_w();
            cin = cout;
            convs.push(tape);
        }
        let p = (h * w) as f64;
        let feature = x.chunks(h * w).map(|c| c.iter().sum::<f64>() / p).collect();
        Ok((feature, EncoderTape { convs }))
    }

    /// Globally pooled convolutional features of a preprocessed image.
    pub fn encode_image(&self, img: &Image) -> Result<Vec<f64>, NnError> {
        Ok(self.encode_with_tape(img)?.0)
    }

    /// Accumulates encoder gradients for `d_feature`.
    pub fn encoder_backward(&self, tape: &EncoderTape, d_feature: &[f64], grads: &mut Grads) {
        let last = tape.convs.last().expect("encoder has layers");
        let p = last.shape.out_h() * last.shape.out_w();
        let mut d: Vec<f64> = d_feature
            .iter()
            .flat_map(|g| std::iter::repeat_n(g / p as f64, p))
            .collect();
        for (i, ct) in tape.convs.iter().enumerate().rev() {
            let (wid, bid) = self.ids.conv[i];
            let mut dw = std::mem::take(&mut grads.data[wid]);
            let mut db = std::mem::take(&mut grads.data[bid]);
            let d_in = conv_backward(self.store.get(wid), ct, &d, &mut dw, &mut db, i > 0);
            grads.data[wid] = dw;
            grads.data[bid] = db;
            if let Some(d_in) = d_in {
                d = d_in;
            }
        }
    }

    // -- recurrent stacks ----------------------------------------------------

    fn stack_forward(
        &self,
        net: Net,
        features: &[&[f64]],
        steps: &[Vec<[f64; 4]>],
        mode: Mode,
        seeds: &[u64],
    ) -> StackTape {
        let s = self.stack_ids(net);
        let hidden = s.hidden;
        let mut offsets = vec![0];
        for seq in steps {
            offsets.push(offsets.last().unwrap() + seq.len());
        }
        let rows = *offsets.last().unwrap();
        let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&sd| ChaCha8Rng::seed_from_u64(sd)).collect();
        let mut input: Vec<f64> = steps.iter().flatten().flatten().copied().collect();
        let mut layers = Vec::with_capacity(s.lstm.len());
        let mut bn_stats = Vec::new();
        for (l, (li, bi)) in s.lstm.iter().zip(&s.bn).enumerate() {
            let w = self.lstm_weights(li);
            let in_dim = li.dims.input_dim;
            let mut hs = Vec::with_capacity(rows * hidden);
            let mut tapes = Vec::with_capacity(steps.len());
            for i in 0..steps.len() {
                let stat: &[f64] = if l == 0 { features[i] } else { &[] };
                let xs = &input[offsets[i] * in_dim..offsets[i + 1] * in_dim];
                let t = lstm_forward(&w, li.dims, stat, xs);
                hs.extend_from_slice(&t.hs);
                tapes.push(t);
            }
            let (gamma, beta) = (self.store.get(bi.gamma), self.store.get(bi.beta));
            let (mut y, bn) = if mode.batch_stats {
                let (y, tape, stats) = bn_forward_train(&hs, hidden, gamma, beta);
                bn_stats.push(stats);
                (y, tape)
            } else {
                bn_forward_eval(&hs, hidden, gamma, beta, self.store.get(bi.mean), self.store.get(bi.var))
            };
            let mask = (mode.dropout && s.dropout > 0.0).then(|| {
                let mut m = Vec::with_capacity(rows * hidden);
                for (i, rng) in rngs.iter_mut().enumerate() {
                    m.extend(dropout_mask((offsets[i + 1] - offsets[i]) * hidden, s.dropout, rng));
                }
                m
            });
            if let Some(m) = &mask {
                y.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            layers.push(LayerTape {
                input: std::mem::replace(&mut input, y),
                lstm: tapes,
                bn,
                mask,
            });
        }
        StackTape {
            offsets,
            layers,
            out: input,
            bn_stats,
        }
    }

    /// Returns the gradients of the per-sample features and step inputs.
    fn stack_backward(
        &self,
        net: Net,
        tape: &StackTape,
        features: &[&[f64]],
        d_out: Vec<f64>,
        grads: &mut Grads,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = self.stack_ids(net);
        let hidden = s.hidden;
        let n = tape.offsets.len() - 1;
        let mut d = d_out;
        let mut d_features = vec![Vec::new(); n];
        for (l, layer) in tape.layers.iter().enumerate().rev() {
            let (li, bi) = (&s.lstm[l], &s.bn[l]);
            if let Some(m) = &layer.mask {
                d.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            let mut dg = std::mem::take(&mut grads.data[bi.gamma]);
            let mut dbeta = std::mem::take(&mut grads.data[bi.beta]);
            let d_hs = bn_backward(&layer.bn, hidden, self.store.get(bi.gamma), &d, &mut dg, &mut dbeta);
            grads.data[bi.gamma] = dg;
            grads.data[bi.beta] = dbeta;
            let w = self.lstm_weights(li);
            let (mut gx, mut gh, mut gb) = take3(grads, li.w_x, li.w_h, li.b);
            let in_dim = li.dims.input_dim;
            let mut d_in = Vec::with_capacity(layer.input.len());
            for i in 0..n {
                let (a, b) = (tape.offsets[i], tape.offsets[i + 1]);
                let stat: &[f64] = if l == 0 { features[i] } else { &[] };
                let mut g = LstmGradsMut {
                    w_x: &mut gx,
                    w_h: &mut gh,
                    b: &mut gb,
                };
                let (d_stat, d_xs) = lstm_backward(
                    &w,
                    li.dims,
                    stat,
                    &layer.input[a * in_dim..b * in_dim],
                    &layer.lstm[i],
                    &d_hs[a * hidden..b * hidden],
                    &mut g,
                );
                if l == 0 {
                    d_features[i] = d_stat;
                }
                d_in.extend_from_slice(&d_xs);
            }
            grads.data[li.w_x] = gx;
            grads.data[li.w_h] = gh;
            grads.data[li.b] = gb;
            d = d_in;
        }
        let d_steps = (0..n)
            .map(|i| d[tape.offsets[i] * STEP_DIM..tape.offsets[i + 1] * STEP_DIM].to_vec())
            .collect();
        (d_features, d_steps)
    }

    /// Folds batch statistics into the running statistics of `net`.
    pub fn update_running_stats(&mut self, net: Net, stats: &[BnStats], rows: usize) {
        let m = self.config.bn_momentum;
        let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
        let bn: Vec<BnIds> = self.stack_ids(net).bn.clone();
        for (b, st) in bn.iter().zip(stats) {
            for (r, v) in self.store.get_mut(b.mean).iter_mut().zip(&st.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            for (r, v) in self.store.get_mut(b.var).iter_mut().zip(&st.var) {
                *r = (1.0 - m) * *r + m * v * unbias;
            }
        }
    }

    // -- generator -------------------------------------------------------

    /// Teacher-forced generator pass: step `k` sees the target of step `k-1`
    /// (zeros at `k = 0`). `seeds` drive the per-sample dropout masks.
    pub fn generator_batch(
        &self,
        features: &[&[f64]],
        targets: &[&[[f64; 4]]],
        seeds: &[u64],
        mode: Mode,
    ) -> GeneratorBatch {
        let inputs: Vec<Vec<[f64; 4]>> = targets
            .iter()
            .map(|t| {
                let mut v = Vec::with_capacity(t.len());
                v.push([0.0; 4]);
                v.extend_from_slice(&t[..t.len().saturating_sub(1)]);
                v
            })
            .collect();
        let stack = self.stack_forward(Net::Generator, features, &inputs, mode, seeds);
        let s = &self.ids.gen;
        let (hw, hb) = (self.store.get(s.head_w), self.store.get(s.head_b));
        let raw: Vec<[f64; 4]> = stack
            .out
            .chunks(s.hidden)
            .map(|h| {
                let r = dense_forward(hw, hb, h);
                [r[0], r[1], r[2], r[3]]
            })
            .collect();
        let outputs = (0..targets.len())
            .map(|i| raw[stack.offsets[i]..stack.offsets[i + 1]].iter().map(|r| squash(*r)).collect())
            .collect();
        GeneratorBatch { stack, raw, outputs }
    }

    /// Backpropagates `d_outputs` (gradients with respect to the squashed
    /// outputs) and returns the per-sample feature gradients.
    pub fn generator_backward(
        &self,
        batch: &GeneratorBatch,
        features: &[&[f64]],
        d_outputs: &[Vec<[f64; 4]>],
        grads: &mut Grads,
    ) -> Vec<Vec<f64>> {
        let s = &self.ids.gen;
        let hw = self.store.get(s.head_w);
        let mut dw = std::mem::take(&mut grads.data[s.head_w]);
        let mut db = std::mem::take(&mut grads.data[s.head_b]);
        let mut d_h = Vec::with_capacity(batch.stack.out.len());
        let flat_out = batch.outputs.iter().flatten();
        let flat_d = d_outputs.iter().flatten();
        for (((raw, out), dout), h) in batch.raw.iter().zip(flat_out).zip(flat_d).zip(batch.stack.out.chunks(s.hidden)) {
            let slope = squash_slope(*raw, *out);
            let d_raw: Vec<f64> = (0..4).map(|k| dout[k] * slope[k]).collect();
            d_h.extend(dense_backward(hw, h, &d_raw, &mut dw, &mut db));
        }
        grads.data[s.head_w] = dw;
        grads.data[s.head_b] = db;
        self.stack_backward(Net::Generator, &batch.stack, features, d_h, grads).0
    }

    /// Single-sample teacher-forced pass with running statistics and dropout
    /// masks drawn from `rng`.
    pub fn generator_teacher_forced<R: Rng>(&self, feature: &[f64], gt: &Scanpath, rng: &mut R) -> Vec<StepOutput> {
        let targets = super::loss::content_targets(gt);
        let b = self.generator_batch(&[feature], &[&targets], &[rng.gen()], Mode::SAMPLE);
        b.outputs[0].iter().map(|a| StepOutput::from_array(*a)).collect()
    }

    /// Free-running generation until the end-of-sequence output exceeds the
    /// threshold or `max_len` steps. Dropout stays active and supplies the
    /// sampling noise. Fixation `i` starts at the sum of the durations of the
    /// fixations before it. Returns the scanpath and the per-step
    /// end-of-sequence probabilities.
    pub fn generator_rollout<R: Rng>(&self, image_id: &str, feature: &[f64], rng: &mut R) -> (Scanpath, Vec<f64>) {
        let cfg = &self.config.generator;
        let s = &self.ids.gen;
        let mut states: Vec<LstmState> = s
            .lstm
            .iter()
            .enumerate()
            .map(|(l, li)| LstmState::new(&self.lstm_weights(li), li.dims, if l == 0 { feature } else { &[] }))
            .collect();
        let mut prev = [0.0; 4];
        let mut t = 0.0;
        let mut fixations = Vec::new();
        let mut eos_seq = Vec::new();
        for _ in 0..cfg.max_len {
            let mut x: Vec<f64> = prev.to_vec();
            for ((li, bi), st) in s.lstm.iter().zip(&s.bn).zip(&mut states) {
                st.step(&self.lstm_weights(li), li.dims, &x);
                let (mut y, _) = bn_forward_eval(
                    &st.h,
                    s.hidden,
                    self.store.get(bi.gamma),
                    self.store.get(bi.beta),
                    self.store.get(bi.mean),
                    self.store.get(bi.var),
                );
                if s.dropout > 0.0 {
                    let m = dropout_mask(s.hidden, s.dropout, rng);
                    y.iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                }
                x = y;
            }
            let r = dense_forward(self.store.get(s.head_w), self.store.get(s.head_b), &x);
            let out = squash([r[0], r[1], r[2], r[3]]);
            fixations.push(Fixation::new(out[0], out[1], t));
            t += out[2];
            eos_seq.push(out[3]);
            if out[3] > cfg.eos_threshold {
                break;
            }
            prev = out;
        }
        let sp = Scanpath {
            image_id: image_id.to_string(),
            observer_id: None,
            fixations,
        };
        (sp, eos_seq)
    }

    // -- discriminator ---------------------------------------------------

    pub fn discriminator_batch(
        &self,
        features: &[&[f64]],
        seqs: &[&[[f64; 4]]],
        seeds: &[u64],
        mode: Mode,
    ) -> Result<DiscriminatorBatch, NnError> {
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(NnError::EmptySequence);
        }
        let steps: Vec<Vec<[f64; 4]>> = seqs.iter().map(|s| s.to_vec()).collect();
        let stack = self.stack_forward(Net::Discriminator, features, &steps, mode, seeds);
        let s = &self.ids.disc;
        let (hw, hb) = (self.store.get(s.head_w), self.store.get(s.head_b));
        let scores = (0..seqs.len())
            .map(|i| {
                let last = stack.offsets[i + 1] - 1;
                sigmoid(dense_forward(hw, hb, &stack.out[last * s.hidden..(last + 1) * s.hidden])[0])
            })
            .collect();
        Ok(DiscriminatorBatch { stack, scores })
    }

    /// Backpropagates score gradients. Returns feature and step gradients per
    /// sample; step gradients are `len × 4` flattened.
    pub fn discriminator_backward(
        &self,
        batch: &DiscriminatorBatch,
        features: &[&[f64]],
        d_scores: &[f64],
        grads: &mut Grads,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = &self.ids.disc;
        let hw = self.store.get(s.head_w);
        let mut dw = std::mem::take(&mut grads.data[s.head_w]);
        let mut db = std::mem::take(&mut grads.data[s.head_b]);
        let mut d_h = vec![0.0; batch.stack.out.len()];
        for (i, (&p, &g)) in batch.scores.iter().zip(d_scores).enumerate() {
            let last = batch.stack.offsets[i + 1] - 1;
            let h = &batch.stack.out[last * s.hidden..(last + 1) * s.hidden];
            let dh = dense_backward(hw, h, &[g * p * (1.0 - p)], &mut dw, &mut db);
            d_h[last * s.hidden..(last + 1) * s.hidden].copy_from_slice(&dh);
        }
        grads.data[s.head_w] = dw;
        grads.data[s.head_b] = db;
        self.stack_backward(Net::Discriminator, &batch.stack, features, d_h, grads)
    }

    /// Probability that `seq` is a real scanpath for the image with `feature`.
    pub fn discriminator_score<R: Rng>(
        &self,
        feature: &[f64],
        seq: &[StepOutput],
        rng: &mut R,
    ) -> Result<f64, NnError> {
        let steps: Vec<[f64; 4]> = seq.iter().map(|s| s.to_array()).collect();
        Ok(self.discriminator_batch(&[feature], &[&steps], &[rng.gen()], Mode::SAMPLE)?.scores[0])
    }

    /// Number of rows a stack tape covers, for running-statistics updates.
    pub fn tape_rows(tape: &StackTape) -> usize {
        *tape.offsets.last().unwrap_or(&0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scanpath::validate_scanpath;

    fn small() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                conv_channels: vec![4, 6],
                coord_channels: true,
            },
            generator: GeneratorConfig {
                hidden: 8,
                layers: 2,
                max_len: 12,
                ..Default::default()
            },
            discriminator: DiscriminatorConfig {
                hidden: 6,
                layers: 2,
                dropout: 0.1,
            },
            input: InputConfig {
                height: 8,
                width: 8,
                mean_pixel: [0.0; 3],
            },
            bn_momentum: 0.1,
        }
    }

    fn image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(3, h, w, (0..3 * h * w).map(|_| rng.gen_range(-0.5..0.5)).collect())
    }

    #[test]
    fn encoder_shapes_and_determinism() {
        let m = Model::new(ModelConfig::default(), 1).unwrap();
        let a = m.encode_image(&image(64, 64, 1)).unwrap();
        let b = m.encode_image(&image(96, 128, 2)).unwrap();
        assert_eq!((a.len(), b.len()), (64, 64));
        assert_eq!(a, m.encode_image(&image(64, 64, 1)).unwrap());
        assert!(matches!(
            m.encode_image(&image(8, 64, 1)),
            Err(NnError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn zero_image_with_zero_biases_gives_zero_features() {
        let m = Model::new(small(), 3).unwrap();
        let f = m.encode_image(&Image::zeros(3, 8, 8)).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rollouts_are_valid_and_noisy() {
        let mut cfg = small();
        cfg.generator.hidden = 64;
        let m = Model::new(cfg, 4).unwrap();
        let f = m.encode_image(&image(8, 8, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut differ = 0;
        for _ in 0..20 {
            let (a, ea) = m.generator_rollout("i", &f, &mut rng);
            let (b, _) = m.generator_rollout("i", &f, &mut rng);
            assert!(a.len() <= 12 && a.len() == ea.len());
            validate_scanpath(&a).unwrap();
            if a != b {
                differ += 1;
            }
        }
        assert!(differ >= 19);
    }

    #[test]
    fn rollout_without_dropout_is_deterministic() {
        let mut cfg = small();
        cfg.generator.dropout = 0.0;
        let m = Model::new(cfg, 4).unwrap();
        let f = m.encode_image(&image(8, 8, 5)).unwrap();
        let a = m.generator_rollout("i", &f, &mut ChaCha8Rng::seed_from_u64(1)).0;
        let b = m.generator_rollout("i", &f, &mut ChaCha8Rng::seed_from_u64(2)).0;
        assert_eq!(a, b);
    }

    #[test]
    fn teacher_forced_lengths_and_ranges() {
        let m = Model::new(small(), 5).unwrap();
        let f = m.encode_image(&image(8, 8, 6)).unwrap();
        let gt = Scanpath::new(
            "i",
            None,
            vec![Fixation::new(0.2, 0.3, 0.0), Fixation::new(0.7, 0.1, 0.3), Fixation::new(0.5, 0.5, 0.5)],
        )
        .unwrap();
        let a = m.generator_teacher_forced(&f, &gt, &mut ChaCha8Rng::seed_from_u64(3));
        let b = m.generator_teacher_forced(&f, &gt, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        for s in &a {
            assert!((0.0..=1.0).contains(&s.x) && (0.0..=1.0).contains(&s.y));
            assert!(s.dt >= 0.0 && (0.0..=1.0).contains(&s.eos));
        }
        let one = Scanpath::new("i", None, vec![Fixation::new(0.2, 0.3, 0.0)]).unwrap();
        assert_eq!(m.generator_teacher_forced(&f, &one, &mut ChaCha8Rng::seed_from_u64(3)).len(), 1);
    }

    #[test]
    fn discriminator_range_and_zero_weights() {
        let mut m = Model::new(small(), 6).unwrap();
        let f = m.encode_image(&image(8, 8, 7)).unwrap();
        let seq = [StepOutput::from_array([0.1, 0.9, 0.2, 0.0]), StepOutput::from_array([0.5, 0.5, 0.3, 1.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = m.discriminator_score(&f, &seq, &mut rng).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(matches!(m.discriminator_score(&f, &[], &mut rng), Err(NnError::EmptySequence)));
        for name in ["disc.head.w", "disc.head.b"] {
            let id = m.store.id(name).unwrap();
            m.store.get_mut(id).fill(0.0);
        }
        assert_eq!(m.discriminator_score(&f, &seq, &mut rng).unwrap(), 0.5);
    }

    #[test]
    fn eval_mode_is_batch_size_independent() {
        let m = Model::new(small(), 7).unwrap();
        let feats: Vec<Vec<f64>> = (0..8).map(|i| m.encode_image(&image(8, 8, 10 + i)).unwrap()).collect();
        let seqs: Vec<Vec<[f64; 4]>> = (0..8)
            .map(|i| (0..(i % 3 + 1)).map(|k| [0.1 * k as f64, 0.5, 0.2, 0.0]).collect())
            .collect();
        let fr: Vec<&[f64]> = feats.iter().map(|f| f.as_slice()).collect();
        let sr: Vec<&[[f64; 4]]> = seqs.iter().map(|s| s.as_slice()).collect();
        let all = m.generator_batch(&fr, &sr, &[0; 8], Mode::EVAL);
        let one = m.generator_batch(&fr[..1], &sr[..1], &[0], Mode::EVAL);
        for (a, b) in all.outputs[0].iter().zip(&one.outputs[0]) {
            for k in 0..4 {
                assert!((a[k] - b[k]).abs() < 1e-10);
            }
        }
        let d_all = m.discriminator_batch(&fr, &sr, &[0; 8], Mode::EVAL).unwrap();
        let d_one = m.discriminator_batch(&fr[..1], &sr[..1], &[0], Mode::EVAL).unwrap();
        assert!((d_all.scores[0] - d_one.scores[0]).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_rebuilds_model() {
        let mut m = Model::new(small(), 8).unwrap();
        m.set_input(InputConfig {
            height: 16,
            width: 24,
            mean_pixel: [0.1, 0.2, 0.3],
        });
        let text = m.store.to_checkpoint_string();
        let back = Model::from_store(&ParamStore::from_checkpoint_str(&text).unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.store, m.store);
    }
}
