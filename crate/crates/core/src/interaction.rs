//! Text-guided fusion branch.
//!
//! Per-joint text embeddings `t` and time-pooled skeleton features are
//! projected into a shared `C_p` space. Each interaction block runs text
//! self-attention, then cross-attention where text rows query skeleton rows,
//! then an MLP over the sum of both streams. The final skeleton stream is
//! projected back to `C_post` and averaged over joints.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{AttnGroup, Graph, NodeId};
use crate::config::InteractionConfig;
use crate::encoder::{AttentionParams, Mlp};
use crate::params::ParamStore;

#[derive(Debug, Clone)]
pub struct InteractionBlockParams {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
    pub fuse: Mlp,
}

#[derive(Debug, Clone)]
pub struct InteractionParams {
    pub text_proj: Mlp,
    pub ske_proj: Mlp,
    pub blocks: Vec<InteractionBlockParams>,
    pub back_proj: Mlp,
}

impl InteractionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, cfg: &InteractionConfig, c_post: usize, rng: &mut R) -> Self {
        let c = cfg.c_p;
        let text_proj = Mlp::init(store, "guidance.text_proj", cfg.c_txt, c, c, rng);
        // Text rows are unit-norm rather than unit-variance per entry.
        store.get_mut(text_proj.w1).scale_assign((cfg.c_txt as f64).sqrt());
        let ske_proj = Mlp::init(store, "guidance.ske_proj", c_post, c, c, rng);
        let blocks = (0..cfg.blocks)
            .map(|i| InteractionBlockParams {
                self_attn: AttentionParams::init(store, &format!("guidance.block{i}.self_attn"), c, rng),
                cross_attn: AttentionParams::init(store, &format!("guidance.block{i}.cross_attn"), c, rng),
                fuse: Mlp::init(store, &format!("guidance.block{i}.fuse"), c, c, c, rng),
            })
            .collect();
        let back_proj = Mlp::init(store, "guidance.back_proj", c, c_post, c_post, rng);
        Self {
            text_proj,
            ske_proj,
            blocks,
            back_proj,
        }
    }
}

/// `(p_txt, p_ske)`, both `V x C_p`.
#[derive(Debug, Clone, Copy)]
pub struct SharedSpace {
    pub p_txt: NodeId,
    pub p_ske: NodeId,
}

/// Handles of one interaction block.
#[derive(Debug, Clone, Copy)]
pub struct InteractionNodes {
    pub p_txt: NodeId,
    /// Cross-attention result (with residual when enabled), before the fusion MLP.
    pub cross: NodeId,
    pub p_st: NodeId,
    pub self_attention: NodeId,
    pub cross_attention: NodeId,
}

fn all_rows(v: usize) -> Arc<Vec<AttnGroup>> {
    Arc::new(vec![AttnGroup::square((0..v).collect())])
}

pub fn project_to_shared(g: &mut Graph, p: &InteractionParams, t: NodeId, f_bar_post: NodeId) -> SharedSpace {
    SharedSpace {
        p_txt: p.text_proj.forward(g, t),
        p_ske: p.ske_proj.forward(g, f_bar_post),
    }
}

pub fn interaction_block(
    g: &mut Graph,
    p: &InteractionBlockParams,
    cfg: &InteractionConfig,
    p_txt_prev: NodeId,
    p_st_prev: NodeId,
) -> InteractionNodes {
    let groups = all_rows(g.value(p_txt_prev).rows);
    let (s, self_attention) = p.self_attn.forward(g, p_txt_prev, p_txt_prev, cfg.heads, groups.clone());
    let p_txt = if cfg.attn_residual { g.add(p_txt_prev, s) } else { s };
    let (c, cross_attention) = p.cross_attn.forward(g, p_txt, p_st_prev, cfg.heads, groups);
    let cross = if cfg.attn_residual { g.add(p_st_prev, c) } else { c };
    let sum = g.add(p_txt, cross);
    let p_st = p.fuse.forward(g, sum);
    InteractionNodes {
        p_txt,
        cross,
        p_st,
        self_attention,
        cross_attention,
    }
}

/// Chains all blocks and returns their handles; the last `p_st` is the branch output.
pub fn run_interaction(g: &mut Graph, p: &InteractionParams, cfg: &InteractionConfig, shared: SharedSpace) -> Vec<InteractionNodes> {
    let mut txt = shared.p_txt;
    let mut st = shared.p_ske;
    let mut out = Vec::with_capacity(p.blocks.len());
    for bp in &p.blocks {
        let nodes = interaction_block(g, bp, cfg, txt, st);
        if !cfg.static_text {
            txt = nodes.p_txt;
        }
        st = nodes.p_st;
        out.push(nodes);
    }
    out
}

/// MLP back to `C_post`, then mean over joints: `1 x C_post`.
pub fn back_project_pool(g: &mut Graph, p: &InteractionParams, p_st: NodeId) -> NodeId {
    let v = g.value(p_st).rows;
    let h = p.back_proj.forward(g, p_st);
    g.group_mean(h, Arc::new(vec![(0..v).collect()]))
}

/// Whole branch from text embeddings and pooled skeleton features to `f_out^c`.
pub fn guidance_forward(g: &mut Graph, p: &InteractionParams, cfg: &InteractionConfig, t: NodeId, f_bar_post: NodeId) -> NodeId {
    let shared = project_to_shared(g, p, t, f_bar_post);
    let nodes = run_interaction(g, p, cfg, shared);
    back_project_pool(g, p, nodes.last().expect("at least one block").p_st)
}
