//! Desk-scale model: patch token embedding, a selective-SSM encoder driven by
//! traversal orders, masked-autoencoder pretraining and a classification head,
//! all trained with hand-written gradients and plain SGD.

mod checkpoint;
mod data;
mod gradcheck;
mod layers;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorRecord, CHECKPOINT_FORMAT};
pub use data::{
    prepare, prepare_all, Dataset, LabeledCloud, Manifest, ManifestEntry, PreparedCloud,
    MANIFEST_FORMAT,
};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckTarget, TensorError, GRAD_FLOOR};
pub use layers::Linear;
pub use model::{Block, MaeHead, Model};
pub use train::{
    evaluate, pretrain_mae, train_classifier, ClassifierReport, EpochMetrics, PretrainReport,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::traversal::ThresholdMode;

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    _ => Err(invalid(format!(
                        concat!("unknown ", stringify!($ty), " '{}' (valid: {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }
    };
}

/// How token sequences are ordered before each block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingMode {
    /// Forward and reverse sort of each of the first `s` eigenvectors (`2s` orders).
    #[default]
    Sast,
    /// Increasing and decreasing hierarchical codes (2 orders).
    Hlt,
    /// Forward and reverse sort along x, y and z (6 orders).
    Axis,
    /// `2s` seeded random permutations, fixed per cloud.
    Random,
}
named_enum!(OrderingMode { Sast => "sast", Hlt => "hlt", Axis => "axis", Random => "random" });

/// Per-point input features of the patch embedder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMode {
    /// Point coordinates relative to the patch center.
    #[serde(rename = "xyz")]
    CenteredXyz,
    /// Rotation-invariant per-point features: `|q|`, `|q - m|`, `q . m` and
    /// `|q . n|`, with `q` the centered point, `m` the patch centroid and `n`
    /// the patch normal (least-variance axis).
    #[default]
    Invariant,
}
named_enum!(EmbedMode { CenteredXyz => "xyz", Invariant => "invariant" });

impl EmbedMode {
    pub fn n_features(self) -> usize {
        match self {
            EmbedMode::CenteredXyz => 3,
            EmbedMode::Invariant => 4,
        }
    }
}

/// Source of the per-token positional code.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosMode {
    /// Canonicalized spectral coordinates, scaled by `sqrt(N_c)`.
    #[default]
    Spectral,
    /// Raw patch-center coordinates.
    #[serde(rename = "xyz")]
    RawXyz,
}
named_enum!(PosMode { Spectral => "spectral", RawXyz => "xyz" });

/// Where learnable tokens go in the decoder sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TarMode {
    /// Back at their recorded positions.
    #[default]
    Restore,
    /// After all visible tokens.
    Append,
}
named_enum!(TarMode { Restore => "restore", Append => "append" });

/// Shape of the network; everything a checkpoint needs to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub state_size: usize,
    pub n_classes: usize,
    /// Points per patch, i.e. points the decoder emits per masked token.
    pub n_neighbors: usize,
    pub embed_mode: EmbedMode,
    pub pos_mode: PosMode,
    /// Eigenvectors used for spectral positional codes.
    pub s: usize,
}

impl ModelConfig {
    pub fn pos_features(&self) -> usize {
        match self.pos_mode {
            PosMode::Spectral => self.s,
            PosMode::RawXyz => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.state_size == 0 || self.n_neighbors == 0 || self.s == 0 {
            return Err(invalid("model config: dimensions must be positive"));
        }
        if self.n_classes < 2 {
            return Err(invalid("model config: need at least two classes"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Eigenvectors per cloud.
    pub s: usize,
    /// Graph neighbors.
    pub k_neighbors: usize,
    pub mask_ratio: f64,
    pub ordering: OrderingMode,
    pub n_centers: usize,
    pub n_neighbors: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub state_size: usize,
    pub embed_mode: EmbedMode,
    pub pos_mode: PosMode,
    pub tar_mode: TarMode,
    pub hlt_threshold: ThresholdMode,
    /// Global gradient-norm clip applied before each step, if set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 30,
            learning_rate: 0.05,
            batch_size: 4,
            s: 4,
            k_neighbors: 20,
            mask_ratio: 0.6,
            ordering: OrderingMode::Sast,
            n_centers: 64,
            n_neighbors: 32,
            d_model: 32,
            n_blocks: 2,
            state_size: 8,
            embed_mode: EmbedMode::Invariant,
            pos_mode: PosMode::Spectral,
            tar_mode: TarMode::Restore,
            hlt_threshold: ThresholdMode::SubgroupMean,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("s", self.s),
            ("k_neighbors", self.k_neighbors),
            ("n_centers", self.n_centers),
            ("n_neighbors", self.n_neighbors),
            ("d_model", self.d_model),
            ("state_size", self.state_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(invalid(format!("train config: {name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("train config: learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(invalid("train config: mask ratio must be in [0, 1)"));
        }
        if self.k_neighbors >= self.n_centers {
            return Err(invalid("train config: K must be smaller than the number of centers"));
        }
        Ok(())
    }

    pub fn model_config(&self, n_classes: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_blocks: self.n_blocks,
            state_size: self.state_size,
            n_classes,
            n_neighbors: self.n_neighbors,
            embed_mode: self.embed_mode,
            pos_mode: self.pos_mode,
            s: self.s,
        }
    }
}
