//! One-shot evaluation on novel classes with the frozen skeleton branch.

mod dc;
mod episode;
mod prototype;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dc::{
    argmax, dc_calibrate, dc_classify, fit_logistic, nearest_base_classes, tukey_transform, BaseStatistics, DcParams,
    LogisticParams, TukeyShift, ALPHA_MIN, TUKEY_EPS,
};
pub use episode::{sample_episode, Episode};
pub use prototype::{prototype_classify, similarity};

use crate::checkpoint::Checkpoint;
use crate::data::{preprocess, Dataset};
use crate::encoder::frames_to_mat;
use crate::error::{Error, Result};
use crate::topology::SkeletonTopology;

/// `f_out^s` per sample, in dataset order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    pub features: Vec<Vec<f64>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Runs only the skeleton branch of a frozen checkpoint. Text never enters this path.
pub fn extract_features(ckpt: &Checkpoint, data: &Dataset, topology: &SkeletonTopology) -> Result<FeatureSet> {
    if !ckpt.metadata.frozen {
        return Err(Error::NotFrozen);
    }
    let enc = &ckpt.model.config.encoder;
    if data.topology_name != topology.name || topology.num_joints() != enc.joints {
        return Err(Error::Shape(format!(
            "dataset topology `{}` ({} joints expected by the model) does not match `{}` with {} joints",
            data.topology_name,
            enc.joints,
            topology.name,
            topology.num_joints()
        )));
    }
    let features: Result<Vec<Vec<f64>>> = data
        .sequences
        .par_iter()
        .map(|s| {
            let coords = frames_to_mat(&preprocess(s, topology, enc.frames).frames);
            ckpt.model.extract_feature(&coords)
        })
        .collect();
    Ok(FeatureSet {
        ids: data.sequences.iter().map(|s| s.id.clone()).collect(),
        labels: data.sequences.iter().map(|s| s.label).collect(),
        features: features?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Dc,
    Prototype,
}

impl ClassifierKind {
    pub fn id(&self) -> &'static str {
        match self {
            Self::Dc => "dc",
            Self::Prototype => "prototype",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub episodes: usize,
    /// Episode `e` uses seed `seed + e`.
    pub seed: u64,
    pub classifier: ClassifierKind,
    pub dc: DcParams,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            episodes: 10,
            seed: 0,
            classifier: ClassifierKind::Dc,
            dc: DcParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: String,
    /// Mean of per-episode accuracies.
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub episode_accuracies: Vec<f64>,
    /// Novel labels; index of rows and columns of `confusion`.
    pub classes: Vec<usize>,
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[truth][predicted]`, summed over episodes.
    pub confusion: Vec<Vec<u64>>,
    pub settings: EvalSettings,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Predictions of one episode in query order.
pub fn classify_episode(
    episode: &Episode,
    novel: &FeatureSet,
    calibration: Option<(&TukeyShift, &BaseStatistics)>,
    settings: &EvalSettings,
) -> Result<Vec<usize>> {
    match settings.classifier {
        ClassifierKind::Prototype => {
            let supports: Vec<(Vec<f64>, usize)> = episode.support.iter().map(|&(i, l)| (novel.features[i].clone(), l)).collect();
            let queries: Vec<Vec<f64>> = episode.query.iter().map(|&i| novel.features[i].clone()).collect();
            Ok(prototype_classify(&supports, &queries))
        }
        ClassifierKind::Dc => {
            let (shift, stats) = calibration.ok_or_else(|| Error::Calibration("distribution calibration needs base features".into()))?;
            let lambda = settings.dc.lambda;
            let supports: Vec<(Vec<f64>, usize)> = episode
                .support
                .iter()
                .map(|&(i, l)| (shift.apply(&novel.features[i], lambda), l))
                .collect();
            let queries: Vec<Vec<f64>> = episode.query.iter().map(|&i| shift.apply(&novel.features[i], lambda)).collect();
            dc_classify(&supports, &queries, stats, &settings.dc, episode.seed)
        }
    }
}

/// Tukey shift and transformed base statistics.
pub fn calibration_from_base(base: &FeatureSet, dc: &DcParams) -> Result<(TukeyShift, BaseStatistics)> {
    if base.is_empty() {
        return Err(Error::Calibration("no base features".into()));
    }
    let shift = TukeyShift::fit(&base.features);
    let transformed: Vec<Vec<f64>> = base.features.iter().map(|f| shift.apply(f, dc.lambda)).collect();
    let stats = BaseStatistics::compute(&transformed, &base.labels, dc.diagonal)?;
    Ok((shift, stats))
}

pub fn evaluate_features(novel: &FeatureSet, base: Option<&FeatureSet>, settings: &EvalSettings) -> Result<EvalReport> {
    if settings.episodes == 0 {
        return Err(Error::Episode("at least one episode is needed".into()));
    }
    let calibration = match (settings.classifier, base) {
        (ClassifierKind::Dc, Some(b)) => Some(calibration_from_base(b, &settings.dc)?),
        (ClassifierKind::Dc, None) => return Err(Error::Calibration("distribution calibration needs base features".into())),
        (ClassifierKind::Prototype, _) => None,
    };
    let seeds: Vec<u64> = (0..settings.episodes as u64).map(|e| settings.seed.wrapping_add(e)).collect();
    let runs: Vec<Result<(Episode, Vec<usize>)>> = seeds
        .par_iter()
        .map(|&seed| {
            let ep = sample_episode(&novel.labels, seed)?;
            let preds = classify_episode(&ep, novel, calibration.as_ref().map(|(s, b)| (s, b)), settings)?;
            Ok((ep, preds))
        })
        .collect();
    let classes: Vec<usize> = {
        let mut c = novel.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    };
    let pos: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut confusion = vec![vec![0u64; classes.len()]; classes.len()];
    let mut episode_accuracies = Vec::with_capacity(runs.len());
    let (mut correct, mut total) = (0u64, 0u64);
    for r in runs {
        let (ep, preds) = r?;
        let mut ok = 0u64;
        for (&q, &p) in ep.query.iter().zip(&preds) {
            let truth = novel.labels[q];
            confusion[pos[&truth]][pos[&p]] += 1;
            ok += (truth == p) as u64;
        }
        correct += ok;
        total += ep.query.len() as u64;
        episode_accuracies.push(ok as f64 / ep.query.len() as f64);
    }
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: u64 = row.iter().sum();
            if n == 0 {
                0.0
            } else {
                row[i] as f64 / n as f64
            }
        })
        .collect();
    Ok(EvalReport {
        classifier: settings.classifier.id().into(),
        accuracy: episode_accuracies.iter().sum::<f64>() / episode_accuracies.len() as f64,
        correct,
        total,
        episodes: settings.episodes,
        seeds,
        episode_accuracies,
        classes,
        per_class_accuracy,
        confusion,
        settings: settings.clone(),
    })
}

/// Extracts features with the frozen skeleton branch and evaluates them.
/// `base` is required for distribution calibration.
pub fn evaluate(
    ckpt: &Checkpoint,
    novel: &Dataset,
    base: Option<&Dataset>,
    topology: &SkeletonTopology,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    let novel_f = extract_features(ckpt, novel, topology)?;
    let base_f = match base {
        Some(b) if settings.classifier == ClassifierKind::Dc => Some(extract_features(ckpt, b, topology)?),
        _ => None,
    };
    evaluate_features(&novel_f, base_f.as_ref(), settings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clustered(labels: &[usize], per: usize) -> FeatureSet {
        let mut f = FeatureSet {
            ids: vec![],
            labels: vec![],
            features: vec![],
        };
        for &l in labels {
            for i in 0..per {
                let mut v = vec![0.05 * i as f64; 4];
                v[l % 4] += 3.0;
                f.ids.push(format!("{l}-{i}"));
                f.labels.push(l);
                f.features.push(v);
            }
        }
        f
    }

    #[test]
    fn perfect_separation_scores_one() {
        let novel = clustered(&[4, 5, 6], 4);
        let s = EvalSettings {
            episodes: 1,
            classifier: ClassifierKind::Prototype,
            ..EvalSettings::default()
        };
        let r = evaluate_features(&novel, None, &s).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.total, 9);
        assert_eq!(r.per_class_accuracy, vec![1.0; 3]);
    }

    #[test]
    fn dc_report_is_reproducible_and_consistent() {
        let novel = clustered(&[4, 5], 5);
        let base = clustered(&[0, 1, 2, 3], 6);
        let s = EvalSettings {
            episodes: 4,
            seed: 9,
            dc: DcParams { n_samples: 20, ..DcParams::default() },
            ..EvalSettings::default()
        };
        let a = evaluate_features(&novel, Some(&base), &s).unwrap();
        assert_eq!(a, evaluate_features(&novel, Some(&base), &s).unwrap());
        let mean = a.episode_accuracies.iter().sum::<f64>() / 4.0;
        assert!((a.accuracy - mean).abs() < 1e-12);
        assert!((a.accuracy - a.correct as f64 / a.total as f64).abs() < 1e-12);
        assert_eq!(a.seeds, vec![9, 10, 11, 12]);
        assert!(a.per_class_accuracy.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(evaluate_features(&novel, None, &s).is_err());
    }
}
