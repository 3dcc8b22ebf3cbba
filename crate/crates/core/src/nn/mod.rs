//! Conditional adversarial scanpath model: convolutional image encoder,
//! recurrent generator with an end-of-sequence output, recurrent
//! discriminator, losses and the RMSprop optimizer.
//!
//! All gradients are derived by hand; `tests/gradients.rs` checks them against
//! central finite differences.

pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod loss;
pub mod model;
pub mod ops;
pub mod params;
pub mod rmsprop;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use image::Image;
pub use loss::{adversarial_losses, combined_generator_loss, content_loss, content_targets};
pub use model::{DiscriminatorConfig, EncoderConfig, GeneratorConfig, Model, ModelConfig};
pub use params::{Grads, ParamStore, CHECKPOINT_HEADER};
pub use rmsprop::{rmsprop_step, RmsProp, RmsPropState};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("image {height}x{width} is smaller than the {min}x{min} the encoder needs")]
    ImageTooSmall { height: usize, width: usize, min: usize },
    #[error("sequence is empty")]
    EmptySequence,
    #[error("prediction has {pred} steps but ground truth has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One generated step: position in `[0, 1]`, a nonnegative duration in
/// seconds and the end-of-sequence probability.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepOutput {
    pub x: f64,
    pub y: f64,
    pub dt: f64,
    pub eos: f64,
}

impl StepOutput {
    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.dt, self.eos]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            x: a[0],
            y: a[1],
            dt: a[2],
            eos: a[3],
        }
    }
}
