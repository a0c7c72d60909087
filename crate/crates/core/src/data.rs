//! Skeleton sequences, datasets, file formats and preprocessing.
//!
//! Text format: one JSON object per line. An optional first line without a
//! `frames` field carries dataset metadata (`topology`, `classes`,
//! `key_joint_truth`). Every other line is `{"id", "label", "frames"}` with
//! `frames` a `T x V x 3` nested array.
//!
//! Binary format (`.bin`): magic `CGLGDS01`, a length-prefixed JSON metadata
//! block, `u32` record count, then per record: `u32` id length + UTF-8 id,
//! `u64` label, `u32` T, `u32` V, `u32` dropped bodies and `T * V * 3`
//! little-endian `f64` coordinates.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::SkeletonTopology;

pub const DEFAULT_FRAMES: usize = 60;
const BINARY_MAGIC: &[u8; 8] = b"CGLGDS01";

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: usize,
    /// `T * V` points, frame-major.
    pub frames: Vec<[f64; 3]>,
    pub num_frames: usize,
    pub num_joints: usize,
    pub topology_name: String,
    /// Extra bodies present in the source record that were discarded.
    pub dropped_bodies: usize,
}

impl SkeletonSequence {
    pub fn new(id: impl Into<String>, label: usize, frames: Vec<Vec<[f64; 3]>>, topology_name: impl Into<String>) -> Self {
        let num_frames = frames.len();
        let num_joints = frames.first().map_or(0, |f| f.len());
        Self {
            id: id.into(),
            label,
            frames: frames.into_iter().flatten().collect(),
            num_frames,
            num_joints,
            topology_name: topology_name.into(),
            dropped_bodies: 0,
        }
    }

    pub fn frame(&self, t: usize) -> &[[f64; 3]] {
        &self.frames[t * self.num_joints..(t + 1) * self.num_joints]
    }

    pub fn point(&self, t: usize, j: usize) -> [f64; 3] {
        self.frames[t * self.num_joints + j]
    }

    pub fn nested_frames(&self) -> Vec<Vec<[f64; 3]>> {
        (0..self.num_frames).map(|t| self.frame(t).to_vec()).collect()
    }

    pub fn validate(&self, topology: &SkeletonTopology) -> std::result::Result<(), String> {
        if self.num_frames == 0 {
            return Err("sequence has no frames".into());
        }
        if self.num_joints != topology.num_joints() {
            return Err(format!(
                "{} joints per frame, topology `{}` has {}",
                self.num_joints,
                topology.name,
                topology.num_joints()
            ));
        }
        if self.frames.len() != self.num_frames * self.num_joints {
            return Err("ragged frames".into());
        }
        if let Some(i) = self.frames.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(format!("non-finite coordinate at frame {} joint {}", i / self.num_joints, i % self.num_joints));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub topology_name: String,
    pub sequences: Vec<SkeletonSequence>,
    pub class_names: BTreeMap<usize, String>,
    /// Binary informative-joint indicator per class; synthetic data only.
    pub key_joint_truth: Option<BTreeMap<usize, Vec<u8>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
struct DatasetHeader {
    #[serde(default)]
    topology: Option<String>,
    #[serde(default)]
    classes: BTreeMap<usize, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    key_joint_truth: Option<BTreeMap<usize, Vec<u8>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SequenceRecord {
    id: String,
    label: usize,
    frames: Vec<Vec<[f64; 3]>>,
    /// Additional bodies, each `T x V x 3`; only body 0 (`frames`) is kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra_bodies: Option<Vec<serde_json::Value>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Sorted distinct labels present in the sequences.
    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect::<BTreeSet<_>>().into_iter().collect()
    }

    fn header(&self) -> DatasetHeader {
        DatasetHeader {
            topology: Some(self.topology_name.clone()),
            classes: self.class_names.clone(),
            key_joint_truth: self.key_joint_truth.clone(),
        }
    }

    /// Writes the line-delimited text form.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write_line = |s: String| writeln!(w, "{s}").map_err(|e| Error::io(path, e));
        write_line(serde_json::to_string(&self.header())?)?;
        for s in &self.sequences {
            let rec = SequenceRecord {
                id: s.id.clone(),
                label: s.label,
                frames: s.nested_frames(),
                extra_bodies: None,
            };
            write_line(serde_json::to_string(&rec)?)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(BINARY_MAGIC);
        let header = serde_json::to_vec(&self.header())?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.sequences.len() as u32).to_le_bytes());
        for s in &self.sequences {
            buf.extend_from_slice(&(s.id.len() as u32).to_le_bytes());
            buf.extend_from_slice(s.id.as_bytes());
            buf.extend_from_slice(&(s.label as u64).to_le_bytes());
            buf.extend_from_slice(&(s.num_frames as u32).to_le_bytes());
            buf.extend_from_slice(&(s.num_joints as u32).to_le_bytes());
            buf.extend_from_slice(&(s.dropped_bodies as u32).to_le_bytes());
            for p in &s.frames {
                for c in p {
                    buf.extend_from_slice(&c.to_le_bytes());
                }
            }
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Loads a dataset, choosing the binary reader for a `.bin` extension.
pub fn load_dataset(path: &Path, topology: &SkeletonTopology) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e == "bin") {
        load_binary(path, topology)
    } else {
        load_jsonl(path, topology)
    }
}

fn load_jsonl(path: &Path, topology: &SkeletonTopology) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut header = None;
    let mut body = &lines[..];
    if let Some(first) = lines.first() {
        let v: serde_json::Value = serde_json::from_str(first).map_err(|e| Error::record(0, e.to_string()))?;
        if v.get("frames").is_none() {
            header = Some(serde_json::from_value::<DatasetHeader>(v).map_err(|e| Error::record(0, e.to_string()))?);
            body = &lines[1..];
        }
    }
    let parsed: Vec<std::result::Result<SkeletonSequence, Error>> = body
        .par_iter()
        .enumerate()
        .map(|(i, line)| {
            let rec: SequenceRecord = serde_json::from_str(line).map_err(|e| Error::record(i, e.to_string()))?;
            let dropped = rec.extra_bodies.as_ref().map_or(0, |b| b.len());
            let mut seq = SkeletonSequence::new(rec.id, rec.label, rec.frames, topology.name.clone());
            seq.dropped_bodies = dropped;
            Ok(seq)
        })
        .collect();
    let mut sequences = Vec::with_capacity(parsed.len());
    for (i, r) in parsed.into_iter().enumerate() {
        match r {
            Ok(s) => sequences.push(s),
            Err(Error::Record { message, .. }) => return Err(Error::record(i, message)),
            Err(e) => return Err(e),
        }
    }
    finish_dataset(sequences, header.unwrap_or_default(), topology)
}

fn load_binary(path: &Path, topology: &SkeletonTopology) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader { bytes: &bytes, pos: 0 };
    let bad = |m: &str| Error::record(0, format!("binary dataset: {m}"));
    if r.take(8).ok_or_else(|| bad("truncated magic"))? != BINARY_MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let header: DatasetHeader = serde_json::from_slice(r.take(hlen).ok_or_else(|| bad("truncated header"))?)?;
    let n = r.u32().ok_or_else(|| bad("truncated count"))? as usize;
    let mut sequences = Vec::with_capacity(n);
    for i in 0..n {
        let trunc = || Error::record(i, "truncated record");
        let idlen = r.u32().ok_or_else(trunc)? as usize;
        let id = String::from_utf8(r.take(idlen).ok_or_else(trunc)?.to_vec()).map_err(|e| Error::record(i, e.to_string()))?;
        let label = r.u64().ok_or_else(trunc)? as usize;
        let t = r.u32().ok_or_else(trunc)? as usize;
        let v = r.u32().ok_or_else(trunc)? as usize;
        let dropped = r.u32().ok_or_else(trunc)? as usize;
        let mut frames = Vec::with_capacity(t * v);
        for _ in 0..t * v {
            let mut p = [0.0; 3];
            for c in &mut p {
                *c = r.f64().ok_or_else(trunc)?;
            }
            frames.push(p);
        }
        sequences.push(SkeletonSequence {
            id,
            label,
            frames,
            num_frames: t,
            num_joints: v,
            topology_name: topology.name.clone(),
            dropped_bodies: dropped,
        });
    }
    finish_dataset(sequences, header, topology)
}

fn finish_dataset(sequences: Vec<SkeletonSequence>, header: DatasetHeader, topology: &SkeletonTopology) -> Result<Dataset> {
    if let Some(name) = &header.topology {
        if *name != topology.name {
            return Err(Error::record(0, format!("dataset topology `{name}` does not match `{}`", topology.name)));
        }
    }
    let explicit_classes = !header.classes.is_empty();
    let mut class_names = header.classes;
    for (i, s) in sequences.iter().enumerate() {
        s.validate(topology).map_err(|m| Error::record(i, m))?;
        if explicit_classes {
            if !class_names.contains_key(&s.label) {
                return Err(Error::record(i, format!("unknown label {}", s.label)));
            }
        } else {
            class_names.entry(s.label).or_insert_with(|| format!("class {}", s.label));
        }
    }
    if let Some(truth) = &header.key_joint_truth {
        for (c, k) in truth {
            if k.len() != topology.num_joints() || k.iter().any(|&b| b > 1) {
                return Err(Error::record(0, format!("key_joint_truth for class {c} is not a binary {}-vector", topology.num_joints())));
            }
        }
    }
    Ok(Dataset {
        topology_name: topology.name.clone(),
        sequences,
        class_names,
        key_joint_truth: header.key_joint_truth,
    })
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Result of [`normalize_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub sequence: SkeletonSequence,
    /// All bones of frame 0 had zero length; only translation was applied.
    pub degenerate: bool,
}

/// Translates so the root joint (index 0) of frame 0 is at the origin, then
/// divides by the mean bone length of frame 0 when it is positive.
pub fn normalize_sequence(seq: &SkeletonSequence, topology: &SkeletonTopology) -> Normalized {
    let origin = seq.point(0, 0);
    let mut out = seq.clone();
    for p in &mut out.frames {
        for k in 0..3 {
            p[k] -= origin[k];
        }
    }
    let scale = topology.mean_bone_length(out.frame(0));
    let degenerate = !(scale > 0.0);
    if !degenerate {
        for p in &mut out.frames {
            for c in p.iter_mut() {
                *c /= scale;
            }
        }
    }
    Normalized {
        sequence: out,
        degenerate,
    }
}

/// Picks frames `floor(i * T / T_out)` for `i in 0..T_out`.
pub fn resample_time(seq: &SkeletonSequence, frames_out: usize) -> SkeletonSequence {
    assert!(frames_out >= 1, "resample_time: frames_out must be >= 1");
    let t = seq.num_frames;
    let mut frames = Vec::with_capacity(frames_out * seq.num_joints);
    for i in 0..frames_out {
        let src = i * t / frames_out;
        frames.extend_from_slice(seq.frame(src));
    }
    SkeletonSequence {
        frames,
        num_frames: frames_out,
        ..seq.clone()
    }
}

/// Normalization followed by resampling, the preprocessing every model input goes through.
pub fn preprocess(seq: &SkeletonSequence, topology: &SkeletonTopology, frames_out: usize) -> SkeletonSequence {
    resample_time(&normalize_sequence(seq, topology).sequence, frames_out)
}

/// Splits into (sequences labelled with a base class, everything else).
pub fn split_base_novel(dataset: &Dataset, base_classes: &[usize]) -> Result<(Dataset, Dataset)> {
    let base: BTreeSet<usize> = base_classes.iter().copied().collect();
    for &c in &base {
        if !dataset.class_names.contains_key(&c) {
            return Err(Error::MissingClass(c));
        }
    }
    let (b, n): (Vec<_>, Vec<_>) = dataset.sequences.iter().cloned().partition(|s| base.contains(&s.label));
    let part = |seqs: Vec<SkeletonSequence>, keep: &dyn Fn(usize) -> bool| Dataset {
        topology_name: dataset.topology_name.clone(),
        sequences: seqs,
        class_names: dataset.class_names.iter().filter(|(c, _)| keep(**c)).map(|(c, n)| (*c, n.clone())).collect(),
        key_joint_truth: dataset
            .key_joint_truth
            .as_ref()
            .map(|t| t.iter().filter(|(c, _)| keep(**c)).map(|(c, k)| (*c, k.clone())).collect()),
    };
    Ok((part(b, &|c| base.contains(&c)), part(n, &|c| !base.contains(&c))))
}

/// Class-index split lists for one-shot evaluation on Kinetics.
pub mod kinetics_splits {
    pub const BASE_20: [usize; 20] = [
        2, 22, 42, 62, 82, 102, 122, 142, 162, 182, 202, 222, 242, 262, 282, 302, 322, 342, 362, 382,
    ];
    pub const BASE_40: [usize; 40] = [
        2, 4, 22, 24, 42, 44, 62, 64, 82, 84, 102, 104, 122, 124, 142, 144, 162, 164, 182, 184, 202, 204, 222,
        224, 242, 244, 262, 264, 282, 284, 302, 304, 322, 324, 342, 344, 362, 364, 382, 384,
    ];
    pub const NOVEL: [usize; 20] = [
        3, 23, 43, 63, 83, 103, 123, 143, 163, 183, 203, 223, 243, 263, 283, 303, 323, 343, 363, 383,
    ];
}
