//! Mini-batch training over base classes.
//!
//! Per-sample graphs are built and differentiated in parallel; their
//! gradients are summed in batch order so results do not depend on thread
//! scheduling. The update is gradient descent with momentum, optional
//! global-norm clipping and cosine learning-rate decay.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::checkpoint::{Checkpoint, TrainingMetadata};
use crate::config::ModelConfig;
use crate::data::{preprocess, Dataset};
use crate::encoder::frames_to_mat;
use crate::error::{Error, Result};
use crate::model::{CrossGlg, LossBreakdown, SampleRef};
use crate::tensor::Mat;
use crate::text::KeyJointDistribution;
use crate::topology::SkeletonTopology;

/// A preprocessed sample ready for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    /// Dataset label.
    pub label: usize,
    /// `(T * V) x 3`.
    pub coords: Mat,
}

/// Normalizes and resamples every sequence to `frames`.
pub fn prepare_samples(ds: &Dataset, topology: &SkeletonTopology, frames: usize) -> Vec<PreparedSample> {
    ds.sequences
        .par_iter()
        .map(|s| PreparedSample {
            id: s.id.clone(),
            label: s.label,
            coords: frames_to_mat(&preprocess(s, topology, frames).frames),
        })
        .collect()
}

/// Text-derived supervision for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGuidance {
    pub key_joints: KeyJointDistribution,
    /// `V x C_txt` joint text embeddings.
    pub text: Mat,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<PreparedSample>,
    /// Sorted dataset labels; position is the classifier output index.
    pub classes: Vec<usize>,
    pub guidance: BTreeMap<usize, ClassGuidance>,
}

impl TrainingSet {
    pub fn new(samples: Vec<PreparedSample>, guidance: BTreeMap<usize, ClassGuidance>) -> Result<Self> {
        let mut classes: Vec<usize> = samples.iter().map(|s| s.label).collect();
        classes.sort_unstable();
        classes.dedup();
        if let Some(&c) = classes.iter().find(|c| !guidance.contains_key(c)) {
            return Err(Error::MissingGuidance(c));
        }
        Ok(Self {
            samples,
            classes,
            guidance,
        })
    }

    pub fn target_of(&self, label: usize) -> Option<usize> {
        self.classes.binary_search(&label).ok()
    }
}

/// Loss means and parameter-gradient means over one batch.
pub fn batch_gradients(model: &CrossGlg, set: &TrainingSet, batch: &[usize]) -> Result<(Vec<Mat>, LossBreakdown)> {
    let raw = model.config.raw_binary_targets;
    let per_sample: Vec<Result<(Vec<Mat>, [f64; 4])>> = batch
        .par_iter()
        .map(|&i| {
            let s = &set.samples[i];
            let guide = set.guidance.get(&s.label).ok_or(Error::MissingGuidance(s.label))?;
            let target = set.target_of(s.label).ok_or(Error::MissingGuidance(s.label))?;
            let k_gt = guide.key_joints.target(raw);
            let mut g = Graph::new(&model.params);
            let n = model.forward_sample(
                &mut g,
                SampleRef {
                    coords: &s.coords,
                    target,
                    k_gt: &k_gt,
                    text: &guide.text,
                },
            )?;
            let grads = g.backward(n.total);
            let mut buf = model.params.zeros_like();
            g.accumulate_param_grads(&grads, &mut buf, 1.0);
            Ok((buf, [g.scalar(n.l_s), g.scalar(n.l_calibrate), g.scalar(n.l_c), g.scalar(n.total)]))
        })
        .collect();
    let mut total = model.params.zeros_like();
    let mut sums = [0.0; 4];
    for r in per_sample {
        let (buf, parts) = r?;
        for (t, b) in total.iter_mut().zip(&buf) {
            t.add_assign(b);
        }
        for (s, p) in sums.iter_mut().zip(parts) {
            *s += p;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for t in &mut total {
        t.scale_assign(inv);
    }
    Ok((
        total,
        LossBreakdown {
            l_s: sums[0] * inv,
            l_calibrate: sums[1] * inv,
            l_c: sums[2] * inv,
            l_overall: sums[3] * inv,
        },
    ))
}

/// Mean losses over a batch without gradients.
pub fn batch_loss(model: &CrossGlg, set: &TrainingSet, batch: &[usize]) -> Result<LossBreakdown> {
    let raw = model.config.raw_binary_targets;
    let parts: Vec<Result<[f64; 4]>> = batch
        .par_iter()
        .map(|&i| {
            let s = &set.samples[i];
            let guide = set.guidance.get(&s.label).ok_or(Error::MissingGuidance(s.label))?;
            let target = set.target_of(s.label).ok_or(Error::MissingGuidance(s.label))?;
            let k_gt = guide.key_joints.target(raw);
            let mut g = Graph::new(&model.params);
            let n = model.forward_sample(&mut g, SampleRef { coords: &s.coords, target, k_gt: &k_gt, text: &guide.text })?;
            Ok([g.scalar(n.l_s), g.scalar(n.l_calibrate), g.scalar(n.l_c), g.scalar(n.total)])
        })
        .collect();
    let mut sums = [0.0; 4];
    for p in parts {
        for (s, v) in sums.iter_mut().zip(p?) {
            *s += v;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    Ok(LossBreakdown {
        l_s: sums[0] * inv,
        l_calibrate: sums[1] * inv,
        l_c: sums[2] * inv,
        l_overall: sums[3] * inv,
    })
}

/// Mean losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_s: f64,
    pub l_c: f64,
    pub l_calibrate: f64,
    pub l_overall: f64,
}

/// Loss of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Optimizer state around a model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: CrossGlg,
    velocity: Vec<Mat>,
    step: usize,
    total_steps: usize,
}

impl Trainer {
    /// `total_steps` sets the length of the cosine schedule.
    pub fn new(model: CrossGlg, total_steps: usize) -> Self {
        let velocity = model.params.zeros_like();
        Self {
            model,
            velocity,
            step: 0,
            total_steps,
        }
    }

    /// Refuses frozen checkpoints.
    pub fn from_checkpoint(ckpt: Checkpoint, total_steps: usize) -> Result<Self> {
        if ckpt.metadata.frozen {
            return Err(Error::Frozen);
        }
        Ok(Self::new(ckpt.model, total_steps))
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let cfg = &self.model.config;
        if !cfg.cosine_decay || self.total_steps == 0 {
            return cfg.lr;
        }
        let progress = (self.step as f64 / self.total_steps as f64).min(1.0);
        cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// One update from the batch-mean gradient. Returns the losses before the update.
    pub fn train_step(&mut self, set: &TrainingSet, batch: &[usize]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let (mut grads, loss) = batch_gradients(&self.model, set, batch)?;
        if !loss.l_overall.is_finite() {
            return Err(Error::Config(format!("non-finite loss at step {}", self.step)));
        }
        if let Some(clip) = self.model.config.grad_clip {
            let norm = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
            if norm > clip {
                for g in &mut grads {
                    g.scale_assign(clip / norm);
                }
            }
        }
        let lr = self.current_lr();
        let mu = self.model.config.momentum;
        for (i, (v, g)) in self.velocity.iter_mut().zip(&grads).enumerate() {
            let p = self.model.params.get_mut(crate::params::ParamId(i));
            for ((vv, gg), pp) in v.data.iter_mut().zip(&g.data).zip(p.data.iter_mut()) {
                *vv = mu * *vv + gg;
                *pp -= lr * *vv;
            }
        }
        self.step += 1;
        Ok(loss)
    }
}

pub fn steps_per_epoch(n_samples: usize, batch: usize) -> usize {
    n_samples.div_ceil(batch)
}

/// Trains from seeded initialization and returns a frozen checkpoint.
pub fn train(config: &ModelConfig, set: &TrainingSet, mut on_step: impl FnMut(&StepLog)) -> Result<Checkpoint> {
    config.validate()?;
    if config.n_classes != set.classes.len() {
        return Err(Error::Config(format!(
            "n_classes = {} but the training set has {} classes",
            config.n_classes,
            set.classes.len()
        )));
    }
    if set.samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    if let Some(s) = set.samples.iter().find(|s| s.coords.rows != config.encoder.frames * config.encoder.joints) {
        return Err(Error::Shape(format!("sample `{}` has {} rows, expected T*V", s.id, s.coords.rows)));
    }
    let model = CrossGlg::new(config.clone())?;
    let per_epoch = steps_per_epoch(set.samples.len(), config.batch);
    let mut trainer = Trainer::new(model, per_epoch * config.epochs);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut order: Vec<usize> = (0..set.samples.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 4];
        for batch in order.chunks(config.batch) {
            let lr = trainer.current_lr();
            let loss = trainer.train_step(set, batch)?;
            on_step(&StepLog {
                epoch,
                step: trainer.steps_taken() - 1,
                lr,
                loss,
            });
            let w = batch.len() as f64;
            sums[0] += w * loss.l_s;
            sums[1] += w * loss.l_calibrate;
            sums[2] += w * loss.l_c;
            sums[3] += w * loss.l_overall;
        }
        let n = set.samples.len() as f64;
        logs.push(EpochLog {
            epoch,
            l_s: sums[0] / n,
            l_calibrate: sums[1] / n,
            l_c: sums[2] / n,
            l_overall: sums[3] / n,
        });
    }
    let mut model = trainer.model;
    model.params.round_to_f32();
    Ok(Checkpoint {
        model,
        metadata: TrainingMetadata {
            epochs: config.epochs,
            seed: config.seed,
            classes: set.classes.clone(),
            losses: logs,
            frozen: true,
        },
    })
}

/// `epoch,l_s,l_c,l_calibrate,l_overall`, one row per epoch.
pub fn write_loss_log(path: &Path, logs: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,l_s,l_c,l_calibrate,l_overall\n");
    for l in logs {
        out.push_str(&format!("{},{},{},{},{}\n", l.epoch, l.l_s, l.l_c, l.l_calibrate, l.l_overall));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use rand::Rng;

    /// Two classes whose joint 0 moves along opposite axes.
    fn toy_set(cfg: &ModelConfig, per_class: usize, seed: u64) -> TrainingSet {
        let e = &cfg.encoder;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for label in 0..2 {
            for i in 0..per_class {
                let mut coords = Mat::zeros(e.frames * e.joints, 3);
                for t in 0..e.frames {
                    for j in 0..e.joints {
                        for c in 0..3 {
                            coords.set(t * e.joints + j, c, 0.05 * rng.random_range(-1.0..1.0) + 0.1 * j as f64);
                        }
                    }
                    let phase = (t as f64 * 1.3).sin();
                    coords.set(t * e.joints, label, coords.get(t * e.joints, label) + phase);
                }
                samples.push(PreparedSample {
                    id: format!("{label}-{i}"),
                    label: label * 5,
                    coords,
                });
            }
        }
        let guidance = (0..2)
            .map(|label| {
                let mut k = vec![0u8; e.joints];
                k[label] = 1;
                let text = Mat::from_vec(
                    e.joints,
                    cfg.interaction.c_txt,
                    (0..e.joints * cfg.interaction.c_txt).map(|i| ((i + label) as f64 * 0.7).sin()).collect(),
                );
                (
                    label * 5,
                    ClassGuidance {
                        key_joints: KeyJointDistribution::from_binary(k).unwrap(),
                        text,
                    },
                )
            })
            .collect();
        TrainingSet::new(samples, guidance).unwrap()
    }

    fn smoke_config() -> ModelConfig {
        ModelConfig {
            n_classes: 2,
            batch: 4,
            lr: 0.05,
            ..ModelConfig::tiny()
        }
    }

    #[test]
    fn missing_guidance_is_reported() {
        let cfg = smoke_config();
        let set = toy_set(&cfg, 2, 0);
        let mut g = set.guidance.clone();
        g.remove(&5);
        assert!(matches!(TrainingSet::new(set.samples.clone(), g), Err(Error::MissingGuidance(5))));
    }

    #[test]
    fn loss_decreases_on_separable_toy() {
        let cfg = smoke_config();
        let set = toy_set(&cfg, 4, 1);
        let mut trainer = Trainer::new(CrossGlg::new(cfg.clone()).unwrap(), 50);
        let all: Vec<usize> = (0..set.samples.len()).collect();
        let first = batch_loss(&trainer.model, &set, &all).unwrap();
        for step in 0..50 {
            let b: Vec<usize> = (0..4).map(|i| (step * 4 + i) % all.len()).collect();
            let l = trainer.train_step(&set, &b).unwrap();
            assert!(l.l_overall.is_finite());
        }
        let last = batch_loss(&trainer.model, &set, &all).unwrap();
        assert!(last.l_overall < first.l_overall, "{first:?} -> {last:?}");
    }

    #[test]
    fn zero_weights_leave_guidance_gradients_zero() {
        let cfg = ModelConfig {
            alpha1: 0.0,
            alpha2: 0.0,
            ..smoke_config()
        };
        let set = toy_set(&cfg, 2, 2);
        let m = CrossGlg::new(cfg).unwrap();
        let (grads, loss) = batch_gradients(&m, &set, &[0, 1, 2, 3]).unwrap();
        assert_eq!(loss.l_overall, loss.l_s);
        for (id, name, _) in m.params.iter() {
            let zero = grads[id.0].data.iter().all(|&v| v == 0.0);
            if CrossGlg::is_guidance_param(name) {
                assert!(zero, "{name}");
            }
        }
        let jid = m.params.id("jid.fc1.weight").unwrap();
        assert!(grads[jid.0].data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn training_is_deterministic_and_logs_decompose() {
        let cfg = ModelConfig { epochs: 3, ..smoke_config() };
        let set = toy_set(&cfg, 3, 3);
        let mut steps_a = Vec::new();
        let a = train(&cfg, &set, |s| steps_a.push(s.loss)).unwrap();
        let mut steps_b = Vec::new();
        let b = train(&cfg, &set, |s| steps_b.push(s.loss)).unwrap();
        assert_eq!(steps_a, steps_b);
        assert_eq!(a.model.params, b.model.params);
        assert!(a.metadata.frozen);
        assert_eq!(steps_a.len(), 3 * steps_per_epoch(6, 4));
        for l in &steps_a {
            let d = l.l_s + cfg.alpha1 * l.l_calibrate + cfg.alpha2 * l.l_c;
            assert!((d - l.l_overall).abs() < 1e-9);
        }
        assert_eq!(a.metadata.losses.len(), 3);
        assert_eq!(a.metadata.classes, vec![0, 5]);
    }

    #[test]
    fn zero_epochs_is_initialization() {
        let cfg = ModelConfig { epochs: 0, ..smoke_config() };
        let set = toy_set(&cfg, 2, 4);
        let ck = train(&cfg, &set, |_| {}).unwrap();
        assert_eq!(ck.model.params, CrossGlg::new(cfg).unwrap().params);
    }

    #[test]
    fn toggles_change_the_result() {
        let cfg = ModelConfig { epochs: 1, ..smoke_config() };
        let set = toy_set(&cfg, 2, 5);
        let full = train(&cfg, &set, |_| {}).unwrap();
        let base = train(&ModelConfig { alpha1: 0.0, alpha2: 0.0, ..cfg.clone() }, &set, |_| {}).unwrap();
        assert!(full.model.params.max_abs_diff(&base.model.params) > 0.0);
    }

    #[test]
    fn frozen_checkpoints_refuse_training() {
        let cfg = ModelConfig { epochs: 0, ..smoke_config() };
        let set = toy_set(&cfg, 2, 6);
        let ck = train(&cfg, &set, |_| {}).unwrap();
        assert!(matches!(Trainer::from_checkpoint(ck.clone(), 1), Err(Error::Frozen)));
        let mut open = ck;
        open.metadata.frozen = false;
        assert!(Trainer::from_checkpoint(open, 1).is_ok());
    }

    #[test]
    fn wrong_class_count_is_rejected() {
        let cfg = ModelConfig { n_classes: 3, ..smoke_config() };
        let set = toy_set(&cfg, 2, 7);
        assert!(train(&cfg, &set, |_| {}).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = smoke_config();
        let mut t = Trainer::new(CrossGlg::new(cfg.clone()).unwrap(), 2);
        assert_eq!(t.current_lr(), cfg.lr);
        t.step = 1;
        assert!((t.current_lr() - cfg.lr / 2.0).abs() < 1e-15);
        t.step = 2;
        assert!(t.current_lr().abs() < 1e-15);
    }
}
