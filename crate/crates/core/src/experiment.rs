//! End-to-end wiring: class guidance from descriptions, and the synthetic
//! train/evaluate experiment used to compare guidance settings.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::ModelConfig;
use crate::data::{split_base_novel, Dataset};
use crate::error::{Error, Result};
use crate::eval::{evaluate_features, extract_features, EvalReport, EvalSettings};
use crate::synthetic::{generate_synthetic, synthetic_descriptions, SyntheticSpec};
use crate::text::{embed_joint_texts, extract_key_joints, ActionDescription, HashedBagOfWords, JointTextEmbeddings, TextEmbedder};
use crate::topology::SkeletonTopology;
use crate::train::{prepare_samples, train, ClassGuidance, TrainingSet};

/// Key joints and text embeddings for each listed class, matched to
/// descriptions by case-insensitive action name. Precomputed embeddings,
/// keyed by lowercase action name, take precedence over `embedder`.
pub fn build_guidance(
    class_names: &BTreeMap<usize, String>,
    classes: &[usize],
    descriptions: &[ActionDescription],
    external: Option<&BTreeMap<String, JointTextEmbeddings>>,
    embedder: &dyn TextEmbedder,
    topology: &SkeletonTopology,
) -> Result<BTreeMap<usize, ClassGuidance>> {
    let by_name: BTreeMap<String, &ActionDescription> = descriptions.iter().map(|d| (d.action_name.to_lowercase(), d)).collect();
    let mut out = BTreeMap::new();
    for &c in classes {
        let name = class_names.get(&c).ok_or(Error::MissingClass(c))?.to_lowercase();
        let desc = by_name.get(&name).ok_or(Error::MissingGuidance(c))?;
        let key_joints = extract_key_joints(desc, topology)?;
        let text = match external.and_then(|m| m.get(&name)) {
            Some(e) => e.t.clone(),
            None => embed_joint_texts(desc, embedder, topology)?.t,
        };
        out.insert(c, ClassGuidance { key_joints, text });
    }
    Ok(out)
}

/// Synthetic data split into the first `n_base` classes and the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub synthetic: SyntheticSpec,
    pub n_base: usize,
    pub data_seed: u64,
    pub model: ModelConfig,
    pub eval: EvalSettings,
}

impl ExperimentSpec {
    /// Desk-scale comparison: 10 base and 4 novel synthetic classes.
    pub fn desk() -> Self {
        let model = ModelConfig {
            n_classes: 10,
            ..ModelConfig::desk()
        };
        Self {
            synthetic: SyntheticSpec {
                n_classes: 14,
                samples_per_class: 20,
                frames: 32,
                ..SyntheticSpec::default()
            },
            n_base: 10,
            data_seed: 0,
            model,
            eval: EvalSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub checkpoint: Checkpoint,
    pub report: EvalReport,
    /// Mean `k_out` mass on each sample's informative joints, base split.
    pub base_key_mass: f64,
    /// Same on the novel split.
    pub novel_key_mass: f64,
    /// Mass a uniform `k_out` would put there, base split.
    pub base_uniform_mass: f64,
    pub novel_uniform_mass: f64,
}

/// Generated dataset and its base/novel split.
pub fn synthetic_split(spec: &ExperimentSpec, topology: &SkeletonTopology) -> Result<(Dataset, Dataset, Dataset)> {
    let ds = generate_synthetic(&spec.synthetic, topology, spec.data_seed)?;
    let base: Vec<usize> = (0..spec.n_base).collect();
    let (b, n) = split_base_novel(&ds, &base)?;
    Ok((ds, b, n))
}

/// Mean mass `k_out` assigns to each sample's ground-truth informative joints,
/// and the mass a uniform distribution would assign.
pub fn key_joint_mass(ckpt: &Checkpoint, data: &Dataset, topology: &SkeletonTopology) -> Result<(f64, f64)> {
    let truth = data
        .key_joint_truth
        .as_ref()
        .ok_or_else(|| Error::Config("dataset has no key-joint ground truth".into()))?;
    let frames = ckpt.model.config.encoder.frames;
    let samples = prepare_samples(data, topology, frames);
    let v = topology.num_joints() as f64;
    let masses: Result<Vec<(f64, f64)>> = samples
        .par_iter()
        .map(|s| {
            let k = truth.get(&s.label).ok_or(Error::MissingClass(s.label))?;
            let out = ckpt.model.encoder_output(&s.coords)?;
            let mass: f64 = out.k_out.iter().zip(k).filter(|(_, &b)| b == 1).map(|(x, _)| x).sum();
            let uniform = k.iter().filter(|&&b| b == 1).count() as f64 / v;
            Ok((mass, uniform))
        })
        .collect();
    let masses = masses?;
    let n = masses.len().max(1) as f64;
    Ok((masses.iter().map(|m| m.0).sum::<f64>() / n, masses.iter().map(|m| m.1).sum::<f64>() / n))
}

/// Trains on the base split with the synthetic descriptions and evaluates one-shot on the novel split.
pub fn run_synthetic_experiment(spec: &ExperimentSpec, topology: &SkeletonTopology) -> Result<ExperimentResult> {
    let (ds, base, novel) = synthetic_split(spec, topology)?;
    let descs = synthetic_descriptions(spec.synthetic.n_classes, topology)?;
    let classes: Vec<usize> = base.class_names.keys().copied().collect();
    let embedder = HashedBagOfWords::new(spec.model.interaction.c_txt);
    let guidance = build_guidance(&ds.class_names, &classes, &descs, None, &embedder, topology)?;
    let samples = prepare_samples(&base, topology, spec.model.encoder.frames);
    let set = TrainingSet::new(samples, guidance)?;
    let ckpt = train(&spec.model, &set, |_| {})?;
    let novel_f = extract_features(&ckpt, &novel, topology)?;
    let base_f = extract_features(&ckpt, &base, topology)?;
    let report = evaluate_features(&novel_f, Some(&base_f), &spec.eval)?;
    let (base_key_mass, base_uniform_mass) = key_joint_mass(&ckpt, &base, topology)?;
    let (novel_key_mass, novel_uniform_mass) = key_joint_mass(&ckpt, &novel, topology)?;
    Ok(ExperimentResult {
        checkpoint: ckpt,
        report,
        base_key_mass,
        novel_key_mass,
        base_uniform_mass,
        novel_uniform_mass,
    })
}
