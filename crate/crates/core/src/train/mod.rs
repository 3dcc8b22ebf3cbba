//! Preprocessing, the content-loss bootstrap, the alternating adversarial
//! schedule, validation, logging and checkpoints.

pub mod data;
pub mod objective;
pub mod predict;
pub mod trainer;

use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::eval::EvalError;
use crate::harness::kv::{KvError, KvMap};
use crate::harness::synth::SynthError;
use crate::nn::model::{DiscriminatorConfig, EncoderConfig, GeneratorConfig, InputConfig, ModelConfig};
use crate::nn::{NnError, RmsProp};

pub use data::{normalize_pixel_scanpath, preprocess, PreparedData};
pub use predict::{predict_set, GeneratorSource};
pub use trainer::{train, IterationRecord, TrainLog, TrainOutcome, Trainer, ValidationRecord};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] KvError),
    #[error("image `{id}` cannot be decoded: {reason}")]
    UndecodableImage { id: String, reason: String },
    #[error("scanpath {record} of image `{image}` has fixation {index} at ({x}, {y}) outside the {width}x{height} image")]
    FixationOutsideImage {
        record: usize,
        image: String,
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("feature file: {0}")]
    FeatureFile(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Dataset(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// When the shared image encoder receives gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderTraining {
    /// Trained by every generator update.
    Full,
    /// Trained during the bootstrap only, frozen for adversarial updates.
    Bootstrap,
    Frozen,
}

impl FromStr for EncoderTraining {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "bootstrap" => Ok(Self::Bootstrap),
            "frozen" => Ok(Self::Frozen),
            _ => Err(format!("expected full, bootstrap or frozen, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Dataset directory with `images/*.pgm` and `scanpaths.jsonl`.
    pub data_dir: PathBuf,
    /// Receives `train_log.csv`, `validation.csv` and checkpoints.
    pub out_dir: PathBuf,
    pub seed: u64,
    pub bootstrap_epochs: usize,
    /// Adversarial iterations.
    pub iterations: usize,
    pub g_updates_per_iter: usize,
    pub d_updates_per_iter: usize,
    pub minibatch: usize,
    /// Fraction of images used for training.
    pub split: f64,
    pub validate_every: usize,
    /// Checkpoint after every this many validations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Generated scanpaths per validation image.
    pub eval_k: usize,
    /// Limits validation images used for the matched cost; 0 uses all.
    pub eval_images: usize,
    pub encoder_training: EncoderTraining,
    /// Optional JSON-lines file of `{"image_id", "feature"}` records that
    /// replaces the encoder.
    pub feature_file: Option<PathBuf>,
    pub model: ModelConfig,
    pub optimizer: RmsProp,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            seed: 0,
            bootstrap_epochs: 5,
            iterations: 300,
            g_updates_per_iter: 8,
            d_updates_per_iter: 16,
            minibatch: 16,
            split: 0.8,
            validate_every: 50,
            checkpoint_every: 1,
            eval_k: 20,
            eval_images: 0,
            encoder_training: EncoderTraining::Full,
            feature_file: None,
            model: ModelConfig::default(),
            optimizer: RmsProp::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.g_updates_per_iter == 0 || self.d_updates_per_iter == 0 || self.minibatch == 0 {
            return bad("update counts and minibatch must be at least 1");
        }
        if self.validate_every == 0 || self.eval_k == 0 {
            return bad("validate_every and eval_k must be at least 1");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie in (0, 1)");
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.rho) && o.eps > 0.0) {
            return bad("optimizer needs lr > 0, 0 <= rho < 1, eps > 0");
        }
        self.model.validate()?;
        Ok(())
    }

    /// Reads a flat `key = value` file; absent keys keep their defaults.
    pub fn from_kv(text: &str) -> Result<Self, TrainError> {
        let mut kv = KvMap::parse(text)?;
        let mut c = Self::default();
        if let Some(v) = kv.take_string("data_dir") {
            c.data_dir = v.into();
        }
        if let Some(v) = kv.take_string("out_dir") {
            c.out_dir = v.into();
        }
        if let Some(v) = kv.take_string("feature_file") {
            c.feature_file = Some(v.into());
        }
        kv.take("seed", &mut c.seed)?;
        kv.take("bootstrap_epochs", &mut c.bootstrap_epochs)?;
        kv.take("iterations", &mut c.iterations)?;
        kv.take("g_updates_per_iter", &mut c.g_updates_per_iter)?;
        kv.take("d_updates_per_iter", &mut c.d_updates_per_iter)?;
        kv.take("minibatch", &mut c.minibatch)?;
        kv.take("split", &mut c.split)?;
        kv.take("validate_every", &mut c.validate_every)?;
        kv.take("checkpoint_every", &mut c.checkpoint_every)?;
        kv.take("eval_k", &mut c.eval_k)?;
        kv.take("eval_images", &mut c.eval_images)?;
        kv.take("encoder_training", &mut c.encoder_training)?;
        let m = &mut c.model;
        let EncoderConfig {
            conv_channels,
            coord_channels,
        } = &mut m.encoder;
        kv.take_list("conv_channels", conv_channels)?;
        kv.take("coord_channels", coord_channels)?;
        let GeneratorConfig {
            hidden,
            layers,
            dropout,
            max_len,
            eos_threshold,
            alpha,
            saturating_loss,
        } = &mut m.generator;
        kv.take("hidden", hidden)?;
        kv.take("layers", layers)?;
        kv.take("dropout", dropout)?;
        kv.take("max_len", max_len)?;
        kv.take("eos_threshold", eos_threshold)?;
        kv.take("alpha", alpha)?;
        kv.take("saturating_loss", saturating_loss)?;
        let DiscriminatorConfig {
            hidden: d_hidden,
            layers: d_layers,
            dropout: d_dropout,
        } = &mut m.discriminator;
        kv.take("disc_hidden", d_hidden)?;
        kv.take("disc_layers", d_layers)?;
        kv.take("disc_dropout", d_dropout)?;
        let InputConfig { height, width, .. } = &mut m.input;
        kv.take("image_height", height)?;
        kv.take("image_width", width)?;
        kv.take("bn_momentum", &mut m.bn_momentum)?;
        kv.take("lr", &mut c.optimizer.lr)?;
        kv.take("rho", &mut c.optimizer.rho)?;
        kv.take("eps", &mut c.optimizer.eps)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }
}
