//! Spatio-temporal skeleton encoder with joint-importance reweighting.
//!
//! Features are `(T * V) x C` with row `t * V + j`. The first `N_pre` blocks
//! produce `f_pre`; its time-pooled summary feeds the joint-importance head,
//! whose softmax output `k_out` rescales each joint's spatially-mixed
//! features inside every remaining block.

use std::sync::Arc;

use rand::Rng;

use crate::autograd::{AttnGroup, Graph, NodeId};
use crate::config::{EncoderConfig, TemporalPooling};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

/// Query/key/value/output projections of one attention layer.
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

impl AttentionParams {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut R) -> Self {
        let mut lin = |n: &str| {
            let w = store.linear_weight(format!("{prefix}.{n}.weight"), width, width, rng);
            let b = store.zeros(format!("{prefix}.{n}.bias"), 1, width);
            (w, b)
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("out");
        Self { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    /// `out_proj(MHA(q_src W_q, kv_src W_k, kv_src W_v))`. Returns (output, attention node).
    pub fn forward(&self, g: &mut Graph, q_src: NodeId, kv_src: NodeId, heads: usize, groups: Arc<Vec<AttnGroup>>) -> (NodeId, NodeId) {
        let q = g.affine(q_src, self.wq, self.bq);
        let k = g.affine(kv_src, self.wk, self.bk);
        let v = g.affine(kv_src, self.wv, self.bv);
        let a = g.attention(q, k, v, heads, groups);
        (g.affine(a, self.wo, self.bo), a)
    }
}

/// Two-layer perceptron `W2 gelu(W1 x + b1) + b2`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn init<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        let w1 = store.linear_weight(format!("{prefix}.fc1.weight"), input, hidden, rng);
        let b1 = store.zeros(format!("{prefix}.fc1.bias"), 1, hidden);
        let w2 = store.linear_weight(format!("{prefix}.fc2.weight"), hidden, output, rng);
        let b2 = store.zeros(format!("{prefix}.fc2.bias"), 1, output);
        Self { w1, b1, w2, b2 }
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let h = g.affine(x, self.w1, self.b1);
        let h = g.gelu(h);
        g.affine(h, self.w2, self.b2)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    fn init(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        Self {
            gamma: store.ones(format!("{prefix}.gamma"), 1, width),
            beta: store.zeros(format!("{prefix}.beta"), 1, width),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockParams {
    pub norm_spatial: LayerNormParams,
    pub spatial: AttentionParams,
    pub norm_temporal: LayerNormParams,
    pub temporal: AttentionParams,
    pub norm_ffn: LayerNormParams,
    pub ffn: Mlp,
}

#[derive(Debug, Clone)]
pub struct JidParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub embed_w: ParamId,
    pub embed_b: ParamId,
    pub joint_embed: ParamId,
    pub embed_proj: Option<(ParamId, ParamId)>,
    pub post_proj: Option<(ParamId, ParamId)>,
    pub blocks: Vec<BlockParams>,
    pub jid: JidParams,
}

impl EncoderParams {
    pub fn init<R: Rng>(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut R) -> Self {
        let embed_w = store.linear_weight("encoder.embed.weight", 3, cfg.c_embed, rng);
        let embed_b = store.zeros("encoder.embed.bias", 1, cfg.c_embed);
        let joint_embed = {
            let data = (0..cfg.joints * cfg.c_embed).map(|_| rng.random_range(-0.5..0.5)).collect();
            store.insert("encoder.joint_embed", Mat::from_vec(cfg.joints, cfg.c_embed, data))
        };
        let embed_proj = (cfg.c_embed != cfg.c_pre).then(|| {
            (
                store.linear_weight("encoder.embed_proj.weight", cfg.c_embed, cfg.c_pre, rng),
                store.zeros("encoder.embed_proj.bias", 1, cfg.c_pre),
            )
        });
        let mut blocks = Vec::with_capacity(cfg.blocks);
        let mut post_proj = None;
        for b in 0..cfg.blocks {
            if b == cfg.pre_blocks && cfg.c_pre != cfg.c_post {
                post_proj = Some((
                    store.linear_weight("encoder.post_proj.weight", cfg.c_pre, cfg.c_post, rng),
                    store.zeros("encoder.post_proj.bias", 1, cfg.c_post),
                ));
            }
            let c = if b < cfg.pre_blocks { cfg.c_pre } else { cfg.c_post };
            let p = format!("encoder.block{b}");
            blocks.push(BlockParams {
                norm_spatial: LayerNormParams::init(store, &format!("{p}.norm_spatial"), c),
                spatial: AttentionParams::init(store, &format!("{p}.spatial"), c, rng),
                norm_temporal: LayerNormParams::init(store, &format!("{p}.norm_temporal"), c),
                temporal: AttentionParams::init(store, &format!("{p}.temporal"), c, rng),
                norm_ffn: LayerNormParams::init(store, &format!("{p}.norm_ffn"), c),
                ffn: Mlp::init(store, &format!("{p}.ffn"), c, c * cfg.ffn_mult, c, rng),
            });
        }
        if cfg.pre_blocks == cfg.blocks && cfg.c_pre != cfg.c_post {
            post_proj = Some((
                store.linear_weight("encoder.post_proj.weight", cfg.c_pre, cfg.c_post, rng),
                store.zeros("encoder.post_proj.bias", 1, cfg.c_post),
            ));
        }
        let jid = JidParams {
            w1: store.linear_weight("jid.fc1.weight", cfg.c_pre, cfg.hidden_jid, rng),
            b1: store.zeros("jid.fc1.bias", 1, cfg.hidden_jid),
            w2: store.linear_weight("jid.fc2.weight", cfg.hidden_jid, 1, rng),
            b2: store.zeros("jid.fc2.bias", 1, 1),
        };
        Self {
            embed_w,
            embed_b,
            joint_embed,
            embed_proj,
            post_proj,
            blocks,
            jid,
        }
    }
}

/// Row groupings derived from `(T, V)`.
#[derive(Debug, Clone)]
pub struct Geometry {
    pub frames: usize,
    pub joints: usize,
    /// One group per frame: joints attend to joints.
    pub spatial: Arc<Vec<AttnGroup>>,
    /// One group per joint: frames attend to frames.
    pub temporal: Arc<Vec<AttnGroup>>,
    /// Rows of each joint across time.
    pub per_joint: Arc<Vec<Vec<usize>>>,
    /// Joint index of each row.
    pub joint_of_row: Arc<[usize]>,
}

impl Geometry {
    pub fn new(frames: usize, joints: usize) -> Self {
        let spatial = (0..frames)
            .map(|t| AttnGroup::square((t * joints..(t + 1) * joints).collect()))
            .collect();
        let per_joint: Vec<Vec<usize>> = (0..joints).map(|j| (0..frames).map(|t| t * joints + j).collect()).collect();
        let temporal = per_joint.iter().cloned().map(AttnGroup::square).collect();
        Self {
            frames,
            joints,
            spatial: Arc::new(spatial),
            temporal: Arc::new(temporal),
            per_joint: Arc::new(per_joint),
            joint_of_row: (0..frames * joints).map(|r| r % joints).collect(),
        }
    }
}

/// Reweighting applied inside a block.
#[derive(Debug, Clone, Copy)]
pub struct Reweight {
    pub k_out: NodeId,
    /// `Some(lambda)` mixes with the identity.
    pub residual: Option<f64>,
}

/// Graph handles produced by one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockNodes {
    pub output: NodeId,
    pub spatial_attention: NodeId,
    /// Features after spatial mixing (and reweighting, when applied), before temporal mixing.
    pub spatial_stage: NodeId,
}

/// Graph handles produced by [`encode`].
#[derive(Debug, Clone)]
pub struct EncoderNodes {
    pub embedded: NodeId,
    pub f_pre: NodeId,
    pub f_bar_pre: NodeId,
    pub k_out: NodeId,
    pub f_post: NodeId,
    pub f_bar_post: NodeId,
    pub blocks: Vec<BlockNodes>,
}

/// Sinusoidal position code, `T x C`.
pub fn positional_encoding(frames: usize, width: usize) -> Mat {
    let mut pe = Mat::zeros(frames, width);
    for t in 0..frames {
        for i in 0..width {
            let exponent = (2 * (i / 2)) as f64 / width as f64;
            let angle = t as f64 / 10000f64.powf(exponent);
            pe.set(t, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}

/// `(T * V) x 3` coordinate matrix.
pub fn frames_to_mat(points: &[[f64; 3]]) -> Mat {
    Mat::from_vec(points.len(), 3, points.iter().flatten().copied().collect())
}

/// Per-joint linear projection of coordinates plus learned joint embedding
/// plus sinusoidal time code.
pub fn embed_skeleton(g: &mut Graph, p: &EncoderParams, cfg: &EncoderConfig, geo: &Geometry, coords: &Mat) -> Result<NodeId> {
    if coords.rows != cfg.frames * cfg.joints || coords.cols != 3 {
        return Err(Error::Shape(format!(
            "skeleton input is {}x{}, expected ({} frames * {} joints) x 3",
            coords.rows, coords.cols, cfg.frames, cfg.joints
        )));
    }
    let x = g.input(coords.clone());
    let lin = g.affine(x, p.embed_w, p.embed_b);
    let je = g.param(p.joint_embed);
    let je = g.gather_rows(je, geo.joint_of_row.clone());
    let pe = positional_encoding(cfg.frames, cfg.c_embed);
    let mut pe_rows = Mat::zeros(cfg.frames * cfg.joints, cfg.c_embed);
    for t in 0..cfg.frames {
        for j in 0..cfg.joints {
            pe_rows.row_mut(t * cfg.joints + j).copy_from_slice(pe.row(t));
        }
    }
    let pe = g.input(pe_rows);
    let h = g.add(lin, je);
    Ok(g.add(h, pe))
}

/// One spatio-temporal block: spatial attention, optional joint reweighting,
/// temporal attention, feed-forward. Pre-norm residual sublayers.
pub fn encoding_block(g: &mut Graph, p: &BlockParams, heads: usize, geo: &Geometry, f: NodeId, reweight: Option<Reweight>) -> BlockNodes {
    let h = g.layer_norm(f, p.norm_spatial.gamma, p.norm_spatial.beta);
    let (s, spatial_attention) = p.spatial.forward(g, h, h, heads, geo.spatial.clone());
    let mut f = g.add(f, s);
    if let Some(rw) = reweight {
        let scaled = g.row_scale(f, rw.k_out, geo.joint_of_row.clone());
        f = match rw.residual {
            None => scaled,
            Some(lambda) => {
                let a = g.scale(scaled, lambda);
                let b = g.scale(f, 1.0 - lambda);
                g.add(a, b)
            }
        };
    }
    let spatial_stage = f;
    let h = g.layer_norm(f, p.norm_temporal.gamma, p.norm_temporal.beta);
    let (tm, _) = p.temporal.forward(g, h, h, heads, geo.temporal.clone());
    let f = g.add(f, tm);
    let h = g.layer_norm(f, p.norm_ffn.gamma, p.norm_ffn.beta);
    let h = p.ffn.forward(g, h);
    let output = g.add(f, h);
    BlockNodes {
        output,
        spatial_attention,
        spatial_stage,
    }
}

/// Joint-importance head: per-joint linear, tanh, linear to a scalar, softmax over joints.
/// Input `V x C_pre`, output `1 x V`.
pub fn jid_forward(g: &mut Graph, p: &JidParams, f_bar_pre: NodeId) -> NodeId {
    let v = g.value(f_bar_pre).rows;
    let h = g.affine(f_bar_pre, p.w1, p.b1);
    let h = g.tanh(h);
    let scores = g.affine(h, p.w2, p.b2);
    let scores = g.reshape(scores, 1, v);
    g.softmax_rows(scores)
}

pub fn pool_time(g: &mut Graph, cfg: &EncoderConfig, geo: &Geometry, f: NodeId) -> NodeId {
    match cfg.pooling {
        TemporalPooling::Mean => g.group_mean(f, geo.per_joint.clone()),
        TemporalPooling::Max => g.group_max(f, geo.per_joint.clone()),
    }
}

/// Full encoder forward. `coords` must already be normalized and resampled to `cfg.frames`.
pub fn encode(g: &mut Graph, p: &EncoderParams, cfg: &EncoderConfig, geo: &Geometry, coords: &Mat) -> Result<EncoderNodes> {
    let embedded = embed_skeleton(g, p, cfg, geo, coords)?;
    let mut f = embedded;
    if let Some((w, b)) = p.embed_proj {
        f = g.affine(f, w, b);
    }
    let mut blocks = Vec::with_capacity(cfg.blocks);
    for bp in &p.blocks[..cfg.pre_blocks] {
        let nodes = encoding_block(g, bp, cfg.heads, geo, f, None);
        f = nodes.output;
        blocks.push(nodes);
    }
    let f_pre = f;
    let f_bar_pre = pool_time(g, cfg, geo, f_pre);
    let k_out = jid_forward(g, &p.jid, f_bar_pre);
    if let Some((w, b)) = p.post_proj {
        f = g.affine(f, w, b);
    }
    let reweight = Reweight {
        k_out,
        residual: cfg.reweight_residual.then_some(cfg.reweight_lambda),
    };
    if cfg.post_blocks() == 0 {
        // No post blocks: reweight the final features once.
        let scaled = g.row_scale(f, k_out, geo.joint_of_row.clone());
        f = match reweight.residual {
            None => scaled,
            Some(lambda) => {
                let a = g.scale(scaled, lambda);
                let b = g.scale(f, 1.0 - lambda);
                g.add(a, b)
            }
        };
    }
    for bp in &p.blocks[cfg.pre_blocks..] {
        let nodes = encoding_block(g, bp, cfg.heads, geo, f, Some(reweight));
        f = nodes.output;
        blocks.push(nodes);
    }
    let f_post = f;
    let f_bar_post = pool_time(g, cfg, geo, f_post);
    Ok(EncoderNodes {
        embedded,
        f_pre,
        f_bar_pre,
        k_out,
        f_post,
        f_bar_post,
        blocks,
    })
}

/// Materialized encoder results for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub f_pre: Mat,
    pub f_post: Mat,
    pub f_bar_post: Mat,
    pub k_out: Vec<f64>,
    /// Per block, `V x V` spatial attention averaged over frames and heads.
    pub attention_maps: Vec<Mat>,
}

impl EncoderOutput {
    pub fn collect(g: &Graph, nodes: &EncoderNodes) -> Self {
        Self {
            f_pre: g.value(nodes.f_pre).clone(),
            f_post: g.value(nodes.f_post).clone(),
            f_bar_post: g.value(nodes.f_bar_post).clone(),
            k_out: g.value(nodes.k_out).data.clone(),
            attention_maps: nodes.blocks.iter().map(|b| averaged_attention(g, b.spatial_attention)).collect(),
        }
    }
}

/// Mean over groups and heads of square attention maps.
pub fn averaged_attention(g: &Graph, node: NodeId) -> Mat {
    let (groups, heads, probs) = g.attention_probs(node).expect("attention node");
    let n = groups[0].keys.len();
    let mut out = Mat::zeros(n, n);
    for p in probs {
        for (o, v) in out.data.iter_mut().zip(p) {
            *o += v;
        }
    }
    out.scale_assign(1.0 / (groups.len() * heads) as f64);
    out
}

/// Mean attention each joint receives, over blocks and query rows.
pub fn aggregate_importance(maps: &[Mat]) -> Vec<f64> {
    let Some(first) = maps.first() else { return Vec::new() };
    let v = first.cols;
    let mut agg = vec![0.0; v];
    for m in maps {
        for r in 0..m.rows {
            for (a, w) in agg.iter_mut().zip(m.row(r)) {
                *a += w;
            }
        }
    }
    let n = (maps.len() * first.rows) as f64;
    agg.iter_mut().for_each(|a| *a /= n);
    agg
}

/// Attention report as CSV: `block,query_joint,w0..w{V-1}` per block row,
/// then one `aggregate,all,...` row of [`aggregate_importance`].
pub fn export_attention(output: &EncoderOutput) -> String {
    let v = output.attention_maps.first().map_or(0, |m| m.cols);
    let mut out = String::from("block,query_joint");
    for j in 0..v {
        out.push_str(&format!(",w{j}"));
    }
    out.push('\n');
    let row = |out: &mut String, head: String, vals: &[f64]| {
        out.push_str(&head);
        for w in vals {
            out.push_str(&format!(",{w}"));
        }
        out.push('\n');
    };
    for (b, m) in output.attention_maps.iter().enumerate() {
        for i in 0..m.rows {
            row(&mut out, format!("{b},{i}"), m.row(i));
        }
    }
    row(&mut out, "aggregate,all".into(), &aggregate_importance(&output.attention_maps));
    out
}
