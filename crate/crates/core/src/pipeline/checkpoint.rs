use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, TrainConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "spectral-order-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// JSON checkpoint: model shape, optional training config, and every
/// parameter tensor with its shape (row-major data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train_config: Option<&TrainConfig>) -> Self {
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| TensorRecord {
                name,
                shape: [t.nrows(), t.ncols()],
                data: t.iter().copied().collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            train_config: train_config.cloned(),
            tensors,
        }
    }

    /// Rebuilds the model, checking every tensor's name and shape.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(&self.config, 0)?;
        self.load_into(&mut model, &[])?;
        Ok(model)
    }

    /// Copies tensors into `model`. Tensors whose name starts with one of
    /// `optional` are skipped when absent or differently shaped; any other
    /// missing, extra or mis-shaped tensor is an error naming it.
    pub fn load_into(&self, model: &mut Model, optional: &[&str]) -> Result<()> {
        let is_optional = |name: &str| optional.iter().any(|p| name.starts_with(p));
        let mut targets = model.named_tensors_mut();
        for rec in &self.tensors {
            let Some((_, dst)) = targets.iter_mut().find(|(n, _)| *n == rec.name) else {
                if is_optional(&rec.name) {
                    continue;
                }
                return Err(Error::Checkpoint(format!("unexpected tensor '{}'", rec.name)));
            };
            let shape = [dst.nrows(), dst.ncols()];
            if rec.shape != shape || rec.data.len() != shape[0] * shape[1] {
                if is_optional(&rec.name) {
                    continue;
                }
                return Err(Error::Checkpoint(format!(
                    "tensor '{}' has shape {:?} (with {} values), model expects {:?}",
                    rec.name,
                    rec.shape,
                    rec.data.len(),
                    shape
                )));
            }
            **dst = Array2::from_shape_vec((shape[0], shape[1]), rec.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor '{}': {e}", rec.name)))?;
        }
        if let Some((name, _)) = targets
            .iter()
            .find(|(n, _)| !is_optional(n) && !self.tensors.iter().any(|r| &r.name == n))
        {
            return Err(Error::Checkpoint(format!("missing tensor '{name}'")));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, model: &Model, train_config: Option<&TrainConfig>) -> Result<()> {
    let text = serde_json::to_string(&Checkpoint::from_model(model, train_config))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint format '{}' version {}",
            path.display(),
            ckpt.format,
            ckpt.version
        )));
    }
    Ok(ckpt)
}
