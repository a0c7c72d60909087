//! Architecture, loss and optimizer settings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TemporalPooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Total encoding blocks `N`.
    pub blocks: usize,
    /// Blocks before joint-importance determination, `N_pre`.
    pub pre_blocks: usize,
    pub c_embed: usize,
    pub c_pre: usize,
    pub c_post: usize,
    pub heads: usize,
    /// Frames after resampling.
    pub frames: usize,
    pub joints: usize,
    pub hidden_jid: usize,
    /// Feed-forward width as a multiple of the block width.
    pub ffn_mult: usize,
    pub pooling: TemporalPooling,
    /// Mix the reweighted features with the identity: `lambda * k * f + (1 - lambda) * f`.
    pub reweight_residual: bool,
    pub reweight_lambda: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            pre_blocks: 2,
            c_embed: 16,
            c_pre: 16,
            c_post: 16,
            heads: 2,
            frames: 60,
            joints: 25,
            hidden_jid: 16,
            ffn_mult: 2,
            pooling: TemporalPooling::Mean,
            reweight_residual: false,
            reweight_lambda: 0.5,
        }
    }
}

impl EncoderConfig {
    pub fn post_blocks(&self) -> usize {
        self.blocks - self.pre_blocks
    }

    /// Default split point for an arbitrary depth, `round(5N/9)`, clamped to `[1, N]`.
    pub fn default_pre_blocks(blocks: usize) -> usize {
        ((5.0 * blocks as f64 / 9.0).round() as usize).clamp(1, blocks.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pre_blocks < 1 || self.pre_blocks > self.blocks {
            return bad(format!("need 1 <= N_pre ({}) <= N ({})", self.pre_blocks, self.blocks));
        }
        if self.heads == 0 {
            return bad("heads must be positive".into());
        }
        for (name, c) in [("c_embed", self.c_embed), ("c_pre", self.c_pre), ("c_post", self.c_post)] {
            if c == 0 || c % self.heads != 0 {
                return bad(format!("{name} = {c} must be a positive multiple of heads = {}", self.heads));
            }
        }
        if self.frames == 0 || self.joints == 0 || self.hidden_jid == 0 || self.ffn_mult == 0 {
            return bad("frames, joints, hidden_jid and ffn_mult must be positive".into());
        }
        if self.reweight_residual && !(0.0..=1.0).contains(&self.reweight_lambda) {
            return bad("reweight_lambda must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InteractionConfig {
    /// Number of interaction blocks `M`.
    pub blocks: usize,
    /// Shared-space width `C_p`.
    pub c_p: usize,
    pub heads: usize,
    pub c_txt: usize,
    /// Feed every block the initial text projection instead of the previous block's text output.
    pub static_text: bool,
    /// Residual connections around the self- and cross-attention steps.
    pub attn_residual: bool,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            blocks: 3,
            c_p: 16,
            heads: 2,
            c_txt: 64,
            static_text: false,
            attn_residual: true,
        }
    }
}

impl InteractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::Config("interaction needs M >= 1 blocks".into()));
        }
        if self.heads == 0 || self.c_p == 0 || self.c_p % self.heads != 0 {
            return Err(Error::Config(format!("c_p = {} must be a positive multiple of heads = {}", self.c_p, self.heads)));
        }
        if self.c_txt == 0 {
            return Err(Error::Config("c_txt must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub interaction: InteractionConfig,
    /// Number of base classes the shared classifier predicts.
    pub n_classes: usize,
    pub classifier_hidden: usize,
    /// Weight of the joint-importance calibration loss.
    pub alpha1: f64,
    /// Weight of the guidance-branch classification loss.
    pub alpha2: f64,
    pub lr: f64,
    pub momentum: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    /// Clip the global gradient norm of each step; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Calibrate against the raw binary key-joint vector instead of its normalized form.
    pub raw_binary_targets: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            interaction: InteractionConfig::default(),
            n_classes: 10,
            classifier_hidden: 32,
            alpha1: 0.5,
            alpha2: 0.2,
            lr: 0.05,
            momentum: 0.9,
            cosine_decay: true,
            grad_clip: Some(5.0),
            batch: 128,
            epochs: 110,
            seed: 0,
            raw_binary_targets: false,
        }
    }
}

impl ModelConfig {
    /// Laptop-scale settings used for the synthetic experiments.
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig {
                frames: 16,
                ..EncoderConfig::default()
            },
            batch: 32,
            epochs: 30,
            ..Self::default()
        }
    }

    /// Deep encoder used to sweep where joint importance is determined.
    pub fn jid_sweep(pre_blocks: usize) -> Self {
        let mut c = Self::desk();
        c.encoder.blocks = 9;
        c.encoder.pre_blocks = pre_blocks;
        c
    }

    /// Smallest configuration used by gradient verification.
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig {
                blocks: 2,
                pre_blocks: 1,
                c_embed: 8,
                c_pre: 8,
                c_post: 8,
                heads: 2,
                frames: 4,
                joints: 5,
                hidden_jid: 4,
                ffn_mult: 1,
                ..EncoderConfig::default()
            },
            interaction: InteractionConfig {
                blocks: 2,
                c_p: 8,
                heads: 2,
                c_txt: 6,
                ..InteractionConfig::default()
            },
            n_classes: 3,
            classifier_hidden: 6,
            batch: 2,
            epochs: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.interaction.validate()?;
        if self.n_classes == 0 || self.classifier_hidden == 0 {
            return Err(Error::Config("n_classes and classifier_hidden must be positive".into()));
        }
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("lr must be > 0 and momentum in [0, 1)".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_training_settings() {
        let c = ModelConfig::default();
        assert_eq!((c.alpha1, c.alpha2), (0.5, 0.2));
        assert_eq!((c.lr, c.batch, c.epochs, c.seed), (0.05, 128, 110, 0));
        assert_eq!(c.interaction.blocks, 3);
        c.validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
    }

    #[test]
    fn default_split_point() {
        assert_eq!(EncoderConfig::default_pre_blocks(9), 5);
        assert_eq!(EncoderConfig::default_pre_blocks(4), 2);
        assert_eq!(EncoderConfig::default_pre_blocks(1), 1);
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::desk();
        c.encoder.pre_blocks = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.encoder.pre_blocks = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.encoder.c_post = 15;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.alpha1 = -1.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.interaction.blocks = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_config_files_fill_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"alpha1": 0.0, "encoder": {"blocks": 9, "pre_blocks": 5}}"#).unwrap();
        assert_eq!(c.alpha1, 0.0);
        assert_eq!(c.alpha2, 0.2);
        assert_eq!(c.encoder.blocks, 9);
        assert_eq!(c.encoder.heads, 2);
    }
}
