//! The dual-branch model: skeleton encoder with joint-importance head,
//! skeleton head, text-guided fusion branch and the classifier both branches share.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, NodeId};
use crate::config::ModelConfig;
use crate::encoder::{encode, EncoderNodes, EncoderOutput, EncoderParams, Geometry, Mlp};
use crate::error::{Error, Result};
use crate::interaction::{guidance_forward, InteractionParams};
use crate::params::ParamStore;
use crate::tensor::{softmax, Mat};

/// Parameter handles of every sub-network.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub encoder: EncoderParams,
    pub skeleton_head: Mlp,
    pub guidance: InteractionParams,
    pub classifier: Mlp,
}

#[derive(Debug, Clone)]
pub struct CrossGlg {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub layout: ModelLayout,
    pub geometry: Geometry,
}

/// Batch-mean losses. `l_overall = l_s + alpha1 * l_calibrate + alpha2 * l_c`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_c: f64,
    pub l_calibrate: f64,
    pub l_overall: f64,
}

/// Combines component losses with the loss weights.
pub fn loss_overall(l_s: f64, l_calibrate: f64, l_c: f64, alpha1: f64, alpha2: f64) -> LossBreakdown {
    LossBreakdown {
        l_s,
        l_c,
        l_calibrate,
        l_overall: l_s + alpha1 * l_calibrate + alpha2 * l_c,
    }
}

/// `(1/V) * sum (k_out - k_gt)^2`.
pub fn loss_calibrate(k_out: &[f64], k_gt: &[f64]) -> Result<f64> {
    if k_out.len() != k_gt.len() {
        return Err(Error::Shape(format!("k_out has {} entries, k_gt {}", k_out.len(), k_gt.len())));
    }
    Ok(k_out.iter().zip(k_gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / k_out.len() as f64)
}

/// `-log softmax(logits)[y]`, stable in the logits.
pub fn loss_ce(logits: &[f64], y: usize) -> Result<f64> {
    if y >= logits.len() {
        return Err(Error::Shape(format!("class {y} outside {} logits", logits.len())));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[y])
}

/// One training example with its class-level guidance.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    /// Preprocessed `(T * V) x 3` coordinates.
    pub coords: &'a Mat,
    /// Classifier output index.
    pub target: usize,
    pub k_gt: &'a [f64],
    /// `V x C_txt` joint text embeddings.
    pub text: &'a Mat,
}

/// Graph handles of a full training forward.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub encoder: EncoderNodes,
    pub f_out_s: NodeId,
    pub f_out_c: NodeId,
    pub logits_s: NodeId,
    pub logits_c: NodeId,
    pub l_s: NodeId,
    pub l_calibrate: NodeId,
    pub l_c: NodeId,
    pub total: NodeId,
}

impl CrossGlg {
    /// Seeded initialization from `config.seed`, rounded to 32-bit precision.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let c_post = config.encoder.c_post;
        let encoder = EncoderParams::init(&mut params, &config.encoder, &mut rng);
        let skeleton_head = Mlp::init(&mut params, "skeleton_head", c_post, c_post, c_post, &mut rng);
        let guidance = InteractionParams::init(&mut params, &config.interaction, c_post, &mut rng);
        let classifier = Mlp::init(&mut params, "classifier", c_post, config.classifier_hidden, config.n_classes, &mut rng);
        // Start from values the f32 checkpoint format stores exactly.
        params.round_to_f32();
        let geometry = Geometry::new(config.encoder.frames, config.encoder.joints);
        Ok(Self {
            config,
            params,
            layout: ModelLayout {
                encoder,
                skeleton_head,
                guidance,
                classifier,
            },
            geometry,
        })
    }

    /// Names of tensors that only the guidance branch reads.
    pub fn is_guidance_param(name: &str) -> bool {
        name.starts_with("guidance.")
    }

    /// Names of tensors of the skeleton encoding branch (encoder, importance head, skeleton head).
    pub fn is_skeleton_branch_param(name: &str) -> bool {
        name.starts_with("encoder.") || name.starts_with("jid.") || name.starts_with("skeleton_head.")
    }

    /// Per-joint MLP on `f_bar_post`, then mean over joints.
    pub fn skeleton_head(&self, g: &mut Graph, f_bar_post: NodeId) -> NodeId {
        let v = g.value(f_bar_post).rows;
        let h = self.layout.skeleton_head.forward(g, f_bar_post);
        g.group_mean(h, Arc::new(vec![(0..v).collect()]))
    }

    pub fn classifier_logits(&self, g: &mut Graph, f: NodeId) -> NodeId {
        self.layout.classifier.forward(g, f)
    }

    /// Shared classifier probabilities for one `C_post` feature.
    pub fn classify(&self, f: &[f64]) -> Vec<f64> {
        let mut g = Graph::new(&self.params);
        let x = g.input(Mat::row_vector(f.to_vec()));
        let logits = self.classifier_logits(&mut g, x);
        softmax(&g.value(logits).data)
    }

    /// Skeleton branch only: encoder, skeleton head. Reads no text.
    pub fn skeleton_forward(&self, g: &mut Graph, coords: &Mat) -> Result<(EncoderNodes, NodeId)> {
        let enc = encode(g, &self.layout.encoder, &self.config.encoder, &self.geometry, coords)?;
        let f = self.skeleton_head(g, enc.f_bar_post);
        Ok((enc, f))
    }

    /// `f_out^s` for one preprocessed sample.
    pub fn extract_feature(&self, coords: &Mat) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let (_, f) = self.skeleton_forward(&mut g, coords)?;
        Ok(g.value(f).data.clone())
    }

    pub fn encoder_output(&self, coords: &Mat) -> Result<EncoderOutput> {
        let mut g = Graph::new(&self.params);
        let enc = encode(&mut g, &self.layout.encoder, &self.config.encoder, &self.geometry, coords)?;
        Ok(EncoderOutput::collect(&g, &enc))
    }

    /// Full training forward of one sample with all three losses and their weighted sum.
    pub fn forward_sample(&self, g: &mut Graph, s: SampleRef) -> Result<ForwardNodes> {
        let cfg = &self.config;
        if s.target >= cfg.n_classes {
            return Err(Error::Shape(format!("target {} outside {} classes", s.target, cfg.n_classes)));
        }
        if s.k_gt.len() != cfg.encoder.joints {
            return Err(Error::Shape(format!("k_gt has {} entries for {} joints", s.k_gt.len(), cfg.encoder.joints)));
        }
        if s.text.shape() != (cfg.encoder.joints, cfg.interaction.c_txt) {
            return Err(Error::Shape(format!(
                "text embeddings are {}x{}, expected {}x{}",
                s.text.rows, s.text.cols, cfg.encoder.joints, cfg.interaction.c_txt
            )));
        }
        let (encoder, f_out_s) = self.skeleton_forward(g, s.coords)?;
        let t = g.input(s.text.clone());
        let f_out_c = guidance_forward(g, &self.layout.guidance, &cfg.interaction, t, encoder.f_bar_post);
        let logits_s = self.classifier_logits(g, f_out_s);
        let logits_c = self.classifier_logits(g, f_out_c);
        let l_s = g.cross_entropy(logits_s, s.target);
        let l_c = g.cross_entropy(logits_c, s.target);
        let l_calibrate = g.mse(encoder.k_out, s.k_gt.to_vec());
        let total = g.weighted_sum(vec![(l_s, 1.0), (l_calibrate, cfg.alpha1), (l_c, cfg.alpha2)]);
        Ok(ForwardNodes {
            encoder,
            f_out_s,
            f_out_c,
            logits_s,
            logits_c,
            l_s,
            l_calibrate,
            l_c,
            total,
        })
    }
}
