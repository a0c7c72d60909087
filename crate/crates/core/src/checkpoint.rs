//! Checkpoint directories.
//!
//! `manifest.json` lists every tensor (name, shape, dtype, byte offset and
//! length into the blob), the model config and training metadata.
//! `params.bin` concatenates the tensors as little-endian `f32` in manifest
//! order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::CrossGlg;
use crate::train::EpochLog;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "params.bin";
const FORMAT: &str = "crossglg-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub seed: u64,
    /// Dataset labels in classifier-output order.
    pub classes: Vec<usize>,
    pub losses: Vec<EpochLog>,
    /// Set when training finished; frozen checkpoints only serve evaluation.
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: CrossGlg,
    pub metadata: TrainingMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    config: ModelConfig,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Writes the directory, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(self.model.params.num_scalars() * 4);
        let mut tensors = Vec::with_capacity(self.model.params.len());
        for (_, name, t) in self.model.params.iter() {
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor `{name}` is not finite")));
            }
            let offset = blob.len();
            for &v in &t.data {
                blob.extend_from_slice(&(v as f32).to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: [t.rows, t.cols],
                dtype: "f32".into(),
                offset,
                bytes: blob.len() - offset,
            });
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            config: self.model.config.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mp = dir.join(MANIFEST_FILE);
        std::fs::write(&mp, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB_FILE);
        std::fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format `{}`", manifest.format)));
        }
        let bp = dir.join(BLOB_FILE);
        let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        let mut model = CrossGlg::new(manifest.config)?;
        if manifest.tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, the config defines {}",
                manifest.tensors.len(),
                model.params.len()
            )));
        }
        for e in &manifest.tensors {
            let id = model
                .params
                .id(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{}`", e.name)))?;
            let t = model.params.get_mut(id);
            if [t.rows, t.cols] != e.shape || e.dtype != "f32" || e.bytes != t.data.len() * 4 {
                return Err(Error::Checkpoint(format!("tensor `{}` has an unexpected shape or dtype", e.name)));
            }
            let bytes = blob
                .get(e.offset..e.offset + e.bytes)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the end of the blob", e.name)))?;
            for (v, c) in t.data.iter_mut().zip(bytes.chunks_exact(4)) {
                *v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor `{}` is not finite", e.name)));
            }
        }
        Ok(Self {
            model,
            metadata: manifest.metadata,
        })
    }
}
