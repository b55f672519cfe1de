//! The language-conditioned pixel affordance model: a small transformer
//! over depth-image patches and instruction tokens, decoded to a pixel
//! heatmap by alternating convolution and nearest-neighbor upsampling.
//!
//! Everything is built from scratch in f64: the forward pass, hand-derived
//! backpropagation for every layer, Adam, and the checkpoint format. The
//! text side uses a learned embedding table over the grammar's closed
//! instruction vocabulary instead of a pretrained encoder.

mod checkpoint;
mod forward;
mod oracle;
mod params;
mod tensor;
mod tokenizer;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{forward, grad_batch, heatmap_loss, predict_point, Heatmap, TrainSample};
pub use oracle::oracle_predict;
pub use params::{init_params, AffordanceParams, TensorMap};
pub use tensor::Tensor;
pub use tokenizer::{TokenSeq, Tokenizer, PAD_ID, UNK_ID};
pub use train::{train, train_from, TrainHyper, TrainLogEntry, TrainState};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::CameraError;

/// Architecture hyperparameters. The defaults train in minutes on one CPU
/// core while leaving every layer type exercised.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Square input image side length H = W (pixels).
    pub image_size: usize,
    /// Patch side length P; the image splits into (H/P)² patches.
    pub patch_size: usize,
    /// Transformer embedding width.
    pub embed_dim: usize,
    /// Encoder layer count.
    pub layers: usize,
    /// Attention heads.
    pub heads: usize,
    /// Hidden width of the per-layer MLP.
    pub mlp_hidden: usize,
    /// Text vocabulary size (PAD and UNK included).
    pub vocab_size: usize,
    /// Fixed token length for instructions, PAD-filled.
    pub max_text_len: usize,
    /// Decoder conv+upsample stages; 2^stages · (H/P) must equal H.
    pub decoder_stages: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            layers: 2,
            heads: 4,
            mlp_hidden: 128,
            vocab_size: Tokenizer::from_grammar().vocab_size(),
            max_text_len: 12,
            decoder_stages: 3,
        }
    }
}

impl ModelConfig {
    pub fn patch_grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.patch_grid() * self.patch_grid()
    }

    pub fn seq_len(&self) -> usize {
        self.patch_count() + self.max_text_len
    }

    /// Decoder channel plan, from the embedding width down to the head
    /// input, halving per stage with a floor of 4.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let mut channels = vec![self.embed_dim];
        for s in 0..self.decoder_stages {
            channels.push((self.embed_dim >> (s + 1)).max(4));
        }
        channels
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(ModelError::BadConfig(format!(
                "image size {} must be a positive multiple of patch size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(ModelError::BadConfig(format!(
                "embed dim {} must be divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.patch_grid() << self.decoder_stages != self.image_size {
            return Err(ModelError::BadConfig(format!(
                "2^{} · {} patches must reach image size {}",
                self.decoder_stages,
                self.patch_grid(),
                self.image_size
            )));
        }
        if self.vocab_size < 2 {
            return Err(ModelError::BadConfig("vocab needs at least PAD and UNK".to_string()));
        }
        if self.layers == 0 || self.max_text_len == 0 {
            return Err(ModelError::BadConfig("layers and text length must be positive".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged: {0}")]
    TrainingDiverged(String),
    #[error("unknown part {part:?} for this template")]
    UnknownPart { part: String },
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error("checkpoint io error: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
}
