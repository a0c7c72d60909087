//! Finite-difference verification of the analytic gradients of the overall loss.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::model::CrossGlg;
use crate::params::ParamId;
use crate::tensor::Mat;
use crate::text::KeyJointDistribution;
use crate::train::{batch_gradients, batch_loss, ClassGuidance, PreparedSample, TrainingSet};

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms; central
/// differences cannot resolve them against rounding noise.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub max_abs_numeric: f64,
    /// Both analytic and numeric gradients are exactly zero.
    pub exact_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// One random sample per class with random guidance for `config`.
pub fn random_training_set(config: &ModelConfig, seed: u64) -> TrainingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = &config.encoder;
    let mut samples = Vec::new();
    let mut guidance = BTreeMap::new();
    for label in 0..config.n_classes {
        let n = e.frames * e.joints * 3;
        samples.push(PreparedSample {
            id: format!("random-{label}"),
            label,
            coords: Mat::from_vec(e.frames * e.joints, 3, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()),
        });
        let mut k: Vec<u8> = (0..e.joints).map(|_| rng.random_range(0..2)).collect();
        k[label % e.joints] = 1;
        let c = config.interaction.c_txt;
        guidance.insert(
            label,
            ClassGuidance {
                key_joints: KeyJointDistribution::from_binary(k).expect("non-empty"),
                text: Mat::from_vec(e.joints, c, (0..e.joints * c).map(|_| rng.random_range(-1.0..1.0)).collect()),
            },
        );
    }
    TrainingSet::new(samples, guidance).expect("guidance for every class")
}

/// Compares every parameter gradient of the batch-mean overall loss against
/// central differences with step [`FD_STEP`] on a random batch.
pub fn check_gradients(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    let mut model = CrossGlg::new(ModelConfig { seed, ..config.clone() })?;
    let set = random_training_set(config, seed.wrapping_add(1));
    let batch: Vec<usize> = (0..set.samples.len()).collect();
    let (analytic, _) = batch_gradients(&model, &set, &batch)?;
    let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (i, name) in names.into_iter().enumerate() {
        let id = ParamId(i);
        let len = model.params.get(id).data.len();
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params.get(id).data[k];
            model.params.get_mut(id).data[k] = orig + FD_STEP;
            let up = batch_loss(&model, &set, &batch)?.l_overall;
            model.params.get_mut(id).data[k] = orig - FD_STEP;
            let down = batch_loss(&model, &set, &batch)?.l_overall;
            model.params.get_mut(id).data[k] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let a = &analytic[i].data;
        let max_a = a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let max_n = numeric.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        tensors.push(TensorCheck {
            name,
            max_rel_error: diff / max_a.max(max_n).max(ABS_FLOOR),
            max_abs_analytic: max_a,
            max_abs_numeric: max_n,
            exact_zero: max_a == 0.0 && max_n == 0.0,
        });
    }
    Ok(GradCheckReport { seed, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_match() {
        let report = check_gradients(&ModelConfig::tiny(), 3).unwrap();
        for t in &report.tensors {
            assert!(t.max_rel_error < 1e-4, "{t:?}");
        }
        for t in &report.tensors {
            if t.name == "jid.fc2.bias" {
                // A shared offset on every joint score cancels in the softmax.
                assert!(t.max_abs_analytic < 1e-12);
            } else {
                assert!(!t.exact_zero, "{}", t.name);
            }
        }
    }

    #[test]
    fn zero_weights_report_exact_zeros() {
        let cfg = ModelConfig {
            alpha1: 0.0,
            alpha2: 0.0,
            ..ModelConfig::tiny()
        };
        let report = check_gradients(&cfg, 4).unwrap();
        for t in &report.tensors {
            if t.name != "jid.fc2.bias" {
                assert_eq!(t.exact_zero, CrossGlg::is_guidance_param(&t.name), "{}", t.name);
            }
        }
        assert_eq!(report, check_gradients(&cfg, 4).unwrap());
    }
}
