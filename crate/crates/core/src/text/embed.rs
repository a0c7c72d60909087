//! Per-joint text embeddings.
//!
//! External embedding files come in pairs: a JSON manifest
//! `{"action", "joints_order", "C_txt", "data"}` and a blob of row-major
//! little-endian `f32` values, one row per entry of `joints_order`. `data`
//! names the blob relative to the manifest and defaults to the manifest
//! path with a `.bin` extension.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ActionDescription;
use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::topology::SkeletonTopology;

pub const DEFAULT_TEXT_DIM: usize = 64;

pub trait TextEmbedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Hashed bag of words: FNV-1a (64-bit) of each lowercase alphabetic token
/// selects a bucket in `[0, dim)`, counts are accumulated and the vector is
/// L2-normalized. An empty token list yields the zero vector.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfWords {
    pub dim: usize,
}

impl HashedBagOfWords {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding width must be positive");
        Self { dim }
    }
}

impl TextEmbedder for HashedBagOfWords {
    fn id(&self) -> &str {
        "hashed-bow-fnv1a"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(default_text_embedder(text, self.dim))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn default_text_embedder(text: &str, dim: usize) -> Vec<f64> {
    assert!(dim > 0, "embedding width must be positive");
    let mut v = vec![0.0; dim];
    for tok in text.split(|c: char| !c.is_alphabetic()).filter(|t| !t.is_empty()) {
        let bucket = (fnv1a(tok.to_lowercase().as_bytes()) % dim as u64) as usize;
        v[bucket] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTextEmbeddings {
    /// `V x C_txt`, rows in topology joint order.
    pub t: Mat,
    pub embedder_id: String,
}

pub fn embed_joint_texts(
    desc: &ActionDescription,
    embedder: &dyn TextEmbedder,
    topology: &SkeletonTopology,
) -> Result<JointTextEmbeddings> {
    let dim = embedder.dim();
    let mut t = Mat::zeros(topology.num_joints(), dim);
    for (j, (name, text)) in desc.ordered_joint_texts(topology).enumerate() {
        let row = embedder
            .embed(text)
            .map_err(|e| Error::Embedding(format!("joint `{name}` of `{}`: {e}", desc.action_name)))?;
        if row.len() != dim {
            return Err(Error::Embedding(format!("joint `{name}`: embedder returned {} values, expected {dim}", row.len())));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Embedding(format!("joint `{name}`: non-finite embedding")));
        }
        t.row_mut(j).copy_from_slice(&row);
    }
    Ok(JointTextEmbeddings {
        t,
        embedder_id: embedder.id().to_string(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    action: String,
    joints_order: Vec<String>,
    #[serde(rename = "C_txt")]
    c_txt: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<String>,
}

fn blob_path(manifest_path: &Path, data: Option<&str>) -> PathBuf {
    match data {
        Some(d) => manifest_path.parent().unwrap_or(Path::new(".")).join(d),
        None => manifest_path.with_extension("bin"),
    }
}

/// Writes a manifest at `path` and its blob next to it.
pub fn save_external_embeddings(path: &Path, action: &str, emb: &JointTextEmbeddings, topology: &SkeletonTopology) -> Result<()> {
    if emb.t.rows != topology.num_joints() {
        return Err(Error::Embedding(format!("{} rows for {} joints", emb.t.rows, topology.num_joints())));
    }
    let blob = path.with_extension("bin");
    let manifest = Manifest {
        action: action.to_string(),
        joints_order: topology.joint_names.clone(),
        c_txt: emb.t.cols,
        data: blob.file_name().map(|n| n.to_string_lossy().into_owned()),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = emb.t.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))
}

/// Loads one action's embeddings; rows are reordered into topology order.
/// Returns the action name alongside.
pub fn load_external_embeddings(path: &Path, topology: &SkeletonTopology) -> Result<(String, JointTextEmbeddings)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let v = topology.num_joints();
    if m.joints_order.len() != v {
        return Err(Error::Embedding(format!(
            "`{}`: {} joints in manifest, topology `{}` has {v}",
            m.action,
            m.joints_order.len(),
            topology.name
        )));
    }
    if m.c_txt == 0 {
        return Err(Error::Embedding("C_txt must be positive".into()));
    }
    let blob = blob_path(path, m.data.as_deref());
    let bytes = std::fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != v * m.c_txt * 4 {
        return Err(Error::Embedding(format!(
            "`{}`: blob holds {} floats, expected {v} x {}",
            m.action,
            bytes.len() / 4,
            m.c_txt
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut t = Mat::zeros(v, m.c_txt);
    let mut seen = vec![false; v];
    for (r, name) in m.joints_order.iter().enumerate() {
        let j = topology
            .joint_index(name)
            .ok_or_else(|| Error::Embedding(format!("`{}`: unknown joint `{name}`", m.action)))?;
        if std::mem::replace(&mut seen[j], true) {
            return Err(Error::Embedding(format!("`{}`: joint `{name}` listed twice", m.action)));
        }
        t.row_mut(j).copy_from_slice(&values[r * m.c_txt..(r + 1) * m.c_txt]);
    }
    if !t.is_finite() {
        return Err(Error::Embedding(format!("`{}`: non-finite value", m.action)));
    }
    Ok((
        m.action,
        JointTextEmbeddings {
            t,
            embedder_id: "external".into(),
        },
    ))
}
