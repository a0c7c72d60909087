//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use crossglg::eval::ClassifierKind;
use crossglg::synthetic::SyntheticSpec;
use crossglg::{EvalSettings, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::args::{Classifier, EvalOverrides, ModelOverrides, TrainInputs};
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub topology: String,
    pub data: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub base_classes: Option<Vec<usize>>,
    pub n_base: Option<usize>,
    pub g2l: bool,
    pub l2g: bool,
    pub static_text: bool,
    pub reweight_residual: bool,
    /// Keys given here override the desk preset, not the bare defaults.
    #[serde(deserialize_with = "over_desk")]
    pub model: ModelConfig,
    pub eval: EvalSettings,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            topology: "ntu25".into(),
            data: None,
            descriptions: None,
            embeddings: None,
            out: None,
            base_classes: None,
            n_base: None,
            g2l: true,
            l2g: true,
            static_text: false,
            reweight_residual: false,
            model: ModelConfig::desk(),
            eval: EvalSettings::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        toml::from_str(&text).map_err(|e| Failure::new("config", format!("{}: {}", path.display(), e.message())))
    }

    pub fn apply_inputs(&mut self, i: &TrainInputs) {
        set(&mut self.data, i.data.clone());
        set(&mut self.descriptions, i.descriptions.clone());
        set(&mut self.embeddings, i.embeddings.clone());
        set(&mut self.base_classes, i.base_classes.clone());
        set(&mut self.n_base, i.n_base);
    }

    pub fn apply_model(&mut self, o: &ModelOverrides) {
        let m = &mut self.model;
        assign(&mut m.epochs, o.epochs);
        assign(&mut m.batch, o.batch);
        assign(&mut m.lr, o.lr);
        assign(&mut m.encoder.frames, o.frames);
        assign(&mut m.encoder.blocks, o.blocks);
        assign(&mut m.encoder.pre_blocks, o.pre_blocks);
        assign(&mut m.alpha1, o.alpha1);
        assign(&mut m.alpha2, o.alpha2);
        assign(&mut self.g2l, o.g2l);
        assign(&mut self.l2g, o.l2g);
        assign(&mut self.static_text, o.static_text);
        assign(&mut self.reweight_residual, o.reweight_residual);
    }

    pub fn apply_eval(&mut self, o: &EvalOverrides) {
        let e = &mut self.eval;
        if let Some(c) = o.classifier {
            e.classifier = match c {
                Classifier::Dc => ClassifierKind::Dc,
                Classifier::Prototype => ClassifierKind::Prototype,
            };
        }
        assign(&mut e.episodes, o.episodes);
        assign(&mut e.dc.k, o.dc_k);
        assign(&mut e.dc.alpha, o.dc_alpha);
        assign(&mut e.dc.lambda, o.dc_lambda);
        assign(&mut e.dc.n_samples, o.dc_samples);
        e.dc.diagonal |= o.dc_diagonal;
    }

    /// Model configuration with the toggles, seed and topology width applied.
    /// A disabled toggle zeroes the matching loss weight.
    pub fn effective_model(&self, joints: usize, n_classes: usize) -> ModelConfig {
        let mut m = self.model.clone();
        m.seed = self.seed;
        m.encoder.joints = joints;
        m.n_classes = n_classes;
        m.encoder.reweight_residual = self.reweight_residual;
        m.interaction.static_text = self.static_text;
        if !self.g2l {
            m.alpha1 = 0.0;
        }
        if !self.l2g {
            m.alpha2 = 0.0;
        }
        m
    }

    pub fn effective_eval(&self) -> EvalSettings {
        EvalSettings {
            seed: self.seed,
            ..self.eval.clone()
        }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

fn over_desk<'de, D: serde::Deserializer<'de>>(d: D) -> Result<ModelConfig, D::Error> {
    use serde::de::Error;
    let patch = serde_json::Value::deserialize(d)?;
    let mut base = serde_json::to_value(ModelConfig::desk()).map_err(D::Error::custom)?;
    merge(&mut base, patch);
    serde_json::from_value(base).map_err(D::Error::custom)
}

fn set<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn assign<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: RunConfig = toml::from_str("seed = 7\n[model]\nepochs = 3\n[model.encoder]\nblocks = 9\npre_blocks = 5\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.model.epochs, 3);
        assert_eq!(c.model.encoder.pre_blocks, 5);
        assert_eq!(c.model.batch, ModelConfig::desk().batch);
        assert!(c.g2l && c.l2g && !c.static_text && !c.reweight_residual);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 1").is_err());
    }

    #[test]
    fn flags_win_and_toggles_zero_weights() {
        let mut c = RunConfig::default();
        c.apply_model(&ModelOverrides {
            epochs: Some(2),
            g2l: Some(false),
            l2g: Some(false),
            static_text: Some(true),
            ..ModelOverrides::default()
        });
        let m = c.effective_model(25, 4);
        assert_eq!((m.alpha1, m.alpha2, m.epochs, m.n_classes), (0.0, 0.0, 2, 4));
        assert!(m.interaction.static_text);
    }
}
