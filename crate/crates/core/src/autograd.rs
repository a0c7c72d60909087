//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Graph`] is built per forward pass; every op records enough of its
//! forward state to run its adjoint. Parameters are borrowed from a
//! [`ParamStore`] and never copied into the tape.

use std::sync::Arc;

use crate::params::{ParamId, ParamStore};
use crate::tensor::{dot, matmul_into, matmul_nt_into, matmul_tn_into, softmax_in_place, Mat};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Query rows attend over key rows of the same group.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnGroup {
    pub queries: Vec<usize>,
    pub keys: Vec<usize>,
}

impl AttnGroup {
    pub fn square(rows: Vec<usize>) -> Self {
        Self {
            queries: rows.clone(),
            keys: rows,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    RowScale { x: NodeId, k: NodeId, map: Arc<[usize]> },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(NodeId),
    Tanh(NodeId),
    GroupMean { x: NodeId, groups: Arc<Vec<Vec<usize>>> },
    GroupMax { x: NodeId, argmax: Vec<usize> },
    GatherRows { x: NodeId, idx: Arc<[usize]> },
    Reshape(NodeId),
    SoftmaxRows(NodeId),
    Attention { q: NodeId, k: NodeId, v: NodeId, heads: usize, groups: Arc<Vec<AttnGroup>>, probs: Vec<Vec<f64>> },
    CrossEntropy { logits: NodeId, target: usize, probs: Vec<f64> },
    Mse { x: NodeId, target: Vec<f64> },
    WeightedSum(Vec<(NodeId, f64)>),
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Adjoints for every node of a graph after [`Graph::backward`].
pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.grads[id.0].as_ref()
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value: Some(value), op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        match &self.nodes[id.0] {
            Node { op: Op::Param(p), .. } => self.params.get(*p),
            Node { value: Some(v), .. } => v,
            Node { value: None, .. } => unreachable!("non-parameter node without value"),
        }
    }

    pub fn input(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// `x @ w + b`, with `b` a `1 x out` row broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols, wv.rows, "linear: input width {} vs weight rows {}", xv.cols, wv.rows);
        let mut out = Mat::zeros(xv.rows, wv.cols);
        matmul_into(&xv.data, &wv.data, &mut out.data, xv.rows, xv.cols, wv.cols);
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.data.len(), wv.cols);
            for r in 0..out.rows {
                for (o, bb) in out.row_mut(r).iter_mut().zip(&bv.data) {
                    *o += bb;
                }
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    /// Convenience wrapper over parameter ids.
    pub fn affine(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let w = self.param(w);
        let b = self.param(b);
        self.linear(x, w, Some(b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!(av.shape(), bv.shape(), "add: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let av = self.value(a);
        let out = Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| x * s).collect());
        self.push(out, Op::Scale(a, s))
    }

    /// `out[r, :] = x[r, :] * k[map[r]]` where `k` is read as a flat vector.
    pub fn row_scale(&mut self, x: NodeId, k: NodeId, map: Arc<[usize]>) -> NodeId {
        let xv = self.value(x);
        let kv = self.value(k);
        assert_eq!(map.len(), xv.rows, "row_scale: map length");
        let mut out = xv.clone();
        for (r, &m) in map.iter().enumerate() {
            let s = kv.data[m];
            for o in out.row_mut(r) {
                *o *= s;
            }
        }
        self.push(out, Op::RowScale { x, k, map })
    }

    /// Per-row layer normalization with learned gain and shift (`1 x C` each).
    pub fn layer_norm(&mut self, x: NodeId, gamma: ParamId, beta: ParamId) -> NodeId {
        let gamma = self.param(gamma);
        let beta = self.param(beta);
        let xv = self.value(x);
        let gv = self.value(gamma);
        let bv = self.value(beta);
        let c = xv.cols;
        let mut out = Mat::zeros(xv.rows, c);
        let mut xhat = vec![0.0; xv.data.len()];
        let mut inv_std = vec![0.0; xv.rows];
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[r] = is;
            for i in 0..c {
                let h = (row[i] - mean) * is;
                xhat[r * c + i] = h;
                out.data[r * c + i] = gv.data[i] * h + bv.data[i];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let data = xv
            .data
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh()))
            .collect();
        let out = Mat::from_vec(xv.rows, xv.cols, data);
        self.push(out, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let out = Mat::from_vec(xv.rows, xv.cols, xv.data.iter().map(|v| v.tanh()).collect());
        self.push(out, Op::Tanh(x))
    }

    /// Output row `g` is the mean of input rows `groups[g]`.
    pub fn group_mean(&mut self, x: NodeId, groups: Arc<Vec<Vec<usize>>>) -> NodeId {
        let xv = self.value(x);
        let mut out = Mat::zeros(groups.len(), xv.cols);
        for (g, rows) in groups.iter().enumerate() {
            let inv = 1.0 / rows.len() as f64;
            let o = out.row_mut(g);
            for &r in rows {
                for (oo, v) in o.iter_mut().zip(xv.row(r)) {
                    *oo += v * inv;
                }
            }
        }
        self.push(out, Op::GroupMean { x, groups })
    }

    /// Column-wise max over each row group; ties resolve to the first row.
    pub fn group_max(&mut self, x: NodeId, groups: Arc<Vec<Vec<usize>>>) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols;
        let mut out = Mat::zeros(groups.len(), c);
        let mut argmax = vec![0; groups.len() * c];
        for (g, rows) in groups.iter().enumerate() {
            for col in 0..c {
                let mut best = rows[0];
                for &r in &rows[1..] {
                    if xv.get(r, col) > xv.get(best, col) {
                        best = r;
                    }
                }
                argmax[g * c + col] = best;
                out.set(g, col, xv.get(best, col));
            }
        }
        self.push(out, Op::GroupMax { x, argmax })
    }

    /// `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: NodeId, idx: Arc<[usize]>) -> NodeId {
        let xv = self.value(x);
        let mut out = Mat::zeros(idx.len(), xv.cols);
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::GatherRows { x, idx })
    }

    pub fn reshape(&mut self, x: NodeId, rows: usize, cols: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.data.len(), rows * cols, "reshape: element count");
        let out = Mat::from_vec(rows, cols, xv.data.clone());
        self.push(out, Op::Reshape(x))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let mut out = self.value(x).clone();
        for r in 0..out.rows {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(x))
    }

    /// Multi-head scaled dot-product attention over pre-projected `q`, `k`, `v`.
    ///
    /// Columns are split into `heads` contiguous slices of width `C / heads`.
    /// Output has the shape of `q`; rows not named as queries in any group stay zero.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId, heads: usize, groups: Arc<Vec<AttnGroup>>) -> NodeId {
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);
        let c = qv.cols;
        assert_eq!(kv.cols, c);
        assert_eq!(vv.cols, c);
        assert!(heads > 0 && c % heads == 0, "attention: width {c} not divisible by {heads} heads");
        let d = c / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Mat::zeros(qv.rows, c);
        let mut probs = Vec::with_capacity(groups.len() * heads);
        for grp in groups.iter() {
            let nk = grp.keys.len();
            for h in 0..heads {
                let cols = h * d..(h + 1) * d;
                let mut p = vec![0.0; grp.queries.len() * nk];
                for (qi, &qr) in grp.queries.iter().enumerate() {
                    let qrow = &qv.row(qr)[cols.clone()];
                    let prow = &mut p[qi * nk..(qi + 1) * nk];
                    for (ki, &kr) in grp.keys.iter().enumerate() {
                        prow[ki] = dot(qrow, &kv.row(kr)[cols.clone()]) * scale;
                    }
                    softmax_in_place(prow);
                    let orow = &mut out.row_mut(qr)[cols.clone()];
                    for (ki, &kr) in grp.keys.iter().enumerate() {
                        let w = prow[ki];
                        for (o, vvv) in orow.iter_mut().zip(&vv.row(kr)[cols.clone()]) {
                            *o += w * vvv;
                        }
                    }
                }
                probs.push(p);
            }
        }
        self.push(out, Op::Attention { q, k, v, heads, groups, probs })
    }

    /// Attention probabilities recorded by an [`Graph::attention`] node:
    /// `(groups, heads, probs)` with `probs[g * heads + h]` a row-major
    /// `queries x keys` matrix.
    pub fn attention_probs(&self, id: NodeId) -> Option<(&[AttnGroup], usize, &[Vec<f64>])> {
        match &self.nodes[id.0].op {
            Op::Attention { groups, heads, probs, .. } => Some((groups.as_slice(), *heads, probs.as_slice())),
            _ => None,
        }
    }

    /// `-log softmax(logits)[target]` for a `1 x n` logit row.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> NodeId {
        let lv = self.value(logits);
        assert!(target < lv.data.len(), "cross_entropy: target {target} out of range");
        let max = lv.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - lv.data[target];
        let probs = lv.data.iter().map(|v| (v - lse).exp()).collect();
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::CrossEntropy { logits, target, probs })
    }

    /// Mean squared error against a constant target of equal length.
    pub fn mse(&mut self, x: NodeId, target: Vec<f64>) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.data.len(), target.len(), "mse: length mismatch");
        let n = target.len() as f64;
        let loss = xv.data.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::Mse { x, target })
    }

    /// `sum_i w_i * x_i` over `1 x 1` nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, f64)>) -> NodeId {
        let total = terms.iter().map(|&(n, w)| w * self.value(n).data[0]).sum();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::WeightedSum(terms))
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.data.len(), 1);
        v.data[0]
    }

    /// Back-propagates from a scalar node with seed gradient 1.
    pub fn backward(&self, loss: NodeId) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.adjoint(i, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Grads { grads }
    }

    /// Adds `weight * dL/dθ` into per-parameter buffers (indexed by [`ParamId`]).
    pub fn accumulate_param_grads(&self, grads: &Grads, out: &mut [Mat], weight: f64) {
        for (p, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = grads.get(*n) {
                    for (o, v) in out[p].data.iter_mut().zip(&g.data) {
                        *o += weight * v;
                    }
                }
            }
        }
    }

    fn adjoint(&self, i: usize, dy: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, k, m) = (xv.rows, xv.cols, wv.cols);
                let dx = acc(grads, *x, n, k);
                matmul_nt_into(&dy.data, &wv.data, &mut dx.data, n, m, k);
                let dw = acc(grads, *w, k, m);
                matmul_tn_into(&xv.data, &dy.data, &mut dw.data, n, k, m);
                if let Some(b) = b {
                    let (br, bc) = self.value(*b).shape();
                    let db = acc(grads, *b, br, bc);
                    for r in 0..n {
                        for (o, g) in db.data.iter_mut().zip(dy.row(r)) {
                            *o += g;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.rows, dy.cols).add_assign(dy);
                acc(grads, *b, dy.rows, dy.cols).add_assign(dy);
            }
            Op::Scale(a, s) => {
                let da = acc(grads, *a, dy.rows, dy.cols);
                for (o, g) in da.data.iter_mut().zip(&dy.data) {
                    *o += s * g;
                }
            }
            Op::RowScale { x, k, map } => {
                let xv = self.value(*x);
                let kv = self.value(*k);
                let (kr, kc) = kv.shape();
                let mut dk = vec![0.0; kv.data.len()];
                {
                    let dx = acc(grads, *x, xv.rows, xv.cols);
                    for (r, &m) in map.iter().enumerate() {
                        let s = kv.data[m];
                        let g = dy.row(r);
                        for (o, gg) in dx.row_mut(r).iter_mut().zip(g) {
                            *o += s * gg;
                        }
                        dk[m] += dot(g, xv.row(r));
                    }
                }
                let dkm = acc(grads, *k, kr, kc);
                for (o, v) in dkm.data.iter_mut().zip(&dk) {
                    *o += v;
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let c = dy.cols;
                let rows = dy.rows;
                let gv = self.value(*gamma);
                {
                    let dg = acc(grads, *gamma, 1, c);
                    for r in 0..rows {
                        for j in 0..c {
                            dg.data[j] += dy.data[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                {
                    let db = acc(grads, *beta, 1, c);
                    for r in 0..rows {
                        for (o, g) in db.data.iter_mut().zip(dy.row(r)) {
                            *o += g;
                        }
                    }
                }
                let dx = acc(grads, *x, rows, c);
                let mut dxhat = vec![0.0; c];
                for r in 0..rows {
                    let mut sum = 0.0;
                    let mut sum_xh = 0.0;
                    for j in 0..c {
                        let v = dy.data[r * c + j] * gv.data[j];
                        dxhat[j] = v;
                        sum += v;
                        sum_xh += v * xhat[r * c + j];
                    }
                    let is = inv_std[r] / c as f64;
                    for j in 0..c {
                        dx.data[r * c + j] += is * (c as f64 * dxhat[j] - sum - xhat[r * c + j] * sum_xh);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = acc(grads, *x, xv.rows, xv.cols);
                for ((o, &v), g) in dx.data.iter_mut().zip(&xv.data).zip(&dy.data) {
                    let u = GELU_C * (v + 0.044715 * v * v * v);
                    let t = u.tanh();
                    let du = GELU_C * (1.0 + 3.0 * 0.044715 * v * v);
                    *o += g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
                }
            }
            Op::Tanh(x) => {
                let yv = node.value.as_ref().expect("tanh value");
                let (r, c) = yv.shape();
                let dx = acc(grads, *x, r, c);
                for ((o, y), g) in dx.data.iter_mut().zip(&yv.data).zip(&dy.data) {
                    *o += g * (1.0 - y * y);
                }
            }
            Op::GroupMean { x, groups } => {
                let (xr, xc) = self.value(*x).shape();
                let dx = acc(grads, *x, xr, xc);
                for (g, rows) in groups.iter().enumerate() {
                    let inv = 1.0 / rows.len() as f64;
                    for &r in rows {
                        for (o, gg) in dx.row_mut(r).iter_mut().zip(dy.row(g)) {
                            *o += gg * inv;
                        }
                    }
                }
            }
            Op::GroupMax { x, argmax } => {
                let (xr, xc) = self.value(*x).shape();
                let dx = acc(grads, *x, xr, xc);
                for (i, &src) in argmax.iter().enumerate() {
                    let col = i % xc;
                    dx.data[src * xc + col] += dy.data[i];
                }
            }
            Op::GatherRows { x, idx } => {
                let (xr, xc) = self.value(*x).shape();
                let dx = acc(grads, *x, xr, xc);
                for (r, &src) in idx.iter().enumerate() {
                    for (o, g) in dx.row_mut(src).iter_mut().zip(dy.row(r)) {
                        *o += g;
                    }
                }
            }
            Op::Reshape(x) => {
                let (xr, xc) = self.value(*x).shape();
                let dx = acc(grads, *x, xr, xc);
                for (o, g) in dx.data.iter_mut().zip(&dy.data) {
                    *o += g;
                }
            }
            Op::SoftmaxRows(x) => {
                let yv = node.value.as_ref().expect("softmax value");
                let dx = acc(grads, *x, yv.rows, yv.cols);
                for r in 0..yv.rows {
                    let y = yv.row(r);
                    let g = dy.row(r);
                    let s = dot(y, g);
                    for ((o, yy), gg) in dx.row_mut(r).iter_mut().zip(y).zip(g) {
                        *o += yy * (gg - s);
                    }
                }
            }
            Op::Attention { q, k, v, heads, groups, probs } => {
                let qv = self.value(*q);
                let kv = self.value(*k);
                let vv = self.value(*v);
                let c = qv.cols;
                let d = c / heads;
                let scale = 1.0 / (d as f64).sqrt();
                let mut dq = Mat::zeros(qv.rows, c);
                let mut dk = Mat::zeros(kv.rows, c);
                let mut dv = Mat::zeros(vv.rows, c);
                for (gi, grp) in groups.iter().enumerate() {
                    let nk = grp.keys.len();
                    let mut ds = vec![0.0; nk];
                    for h in 0..*heads {
                        let cols = h * d..(h + 1) * d;
                        let p = &probs[gi * heads + h];
                        for (qi, &qr) in grp.queries.iter().enumerate() {
                            let prow = &p[qi * nk..(qi + 1) * nk];
                            let go = &dy.row(qr)[cols.clone()];
                            // dP = dO V^T, dS = P * (dP - <dP, P>)
                            let mut s = 0.0;
                            for (ki, &kr) in grp.keys.iter().enumerate() {
                                let dp = dot(go, &vv.row(kr)[cols.clone()]);
                                ds[ki] = dp;
                                s += dp * prow[ki];
                                let dvr = &mut dv.row_mut(kr)[cols.clone()];
                                for (o, g) in dvr.iter_mut().zip(go) {
                                    *o += prow[ki] * g;
                                }
                            }
                            for ki in 0..nk {
                                ds[ki] = prow[ki] * (ds[ki] - s) * scale;
                            }
                            for (ki, &kr) in grp.keys.iter().enumerate() {
                                let w = ds[ki];
                                if w == 0.0 {
                                    continue;
                                }
                                let krow = &kv.row(kr)[cols.clone()];
                                let dqr = &mut dq.row_mut(qr)[cols.clone()];
                                for (o, kk) in dqr.iter_mut().zip(krow) {
                                    *o += w * kk;
                                }
                                let qrow = &qv.row(qr)[cols.clone()];
                                let dkr = &mut dk.row_mut(kr)[cols.clone()];
                                for (o, qq) in dkr.iter_mut().zip(qrow) {
                                    *o += w * qq;
                                }
                            }
                        }
                    }
                }
                acc(grads, *q, dq.rows, c).add_assign(&dq);
                acc(grads, *k, dk.rows, c).add_assign(&dk);
                acc(grads, *v, dv.rows, c).add_assign(&dv);
            }
            Op::CrossEntropy { logits, target, probs } => {
                let g = dy.data[0];
                let dl = acc(grads, *logits, 1, probs.len());
                for (j, (o, p)) in dl.data.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    *o += g * (p - onehot);
                }
            }
            Op::Mse { x, target } => {
                let xv = self.value(*x);
                let g = dy.data[0] * 2.0 / target.len() as f64;
                let dx = acc(grads, *x, xv.rows, xv.cols);
                for ((o, a), b) in dx.data.iter_mut().zip(&xv.data).zip(target) {
                    *o += g * (a - b);
                }
            }
            Op::WeightedSum(terms) => {
                let g = dy.data[0];
                for &(n, w) in terms {
                    acc(grads, n, 1, 1).data[0] += g * w;
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Mat>], id: NodeId, rows: usize, cols: usize) -> &mut Mat {
    grads[id.0].get_or_insert_with(|| Mat::zeros(rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
        Mat::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central differences on every parameter scalar of `f`.
    fn check<F>(store: &mut ParamStore, f: F) -> f64
    where
        F: Fn(&mut Graph) -> NodeId,
    {
        let analytic = {
            let mut g = Graph::new(store);
            let loss = f(&mut g);
            let grads = g.backward(loss);
            let mut out = store.zeros_like();
            g.accumulate_param_grads(&grads, &mut out, 1.0);
            out
        };
        let eval = |s: &ParamStore| {
            let mut g = Graph::new(s);
            let l = f(&mut g);
            g.scalar(l)
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for id in store.ids().collect::<Vec<_>>() {
            for i in 0..store.get(id).data.len() {
                let orig = store.get(id).data[i];
                store.get_mut(id).data[i] = orig + h;
                let up = eval(store);
                store.get_mut(id).data[i] = orig - h;
                let down = eval(store);
                store.get_mut(id).data[i] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = analytic[id.0].data[i];
                let err = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-8);
                worst = worst.max(err.min((num - ana).abs() / 1e-6));
            }
        }
        worst
    }

    #[test]
    fn gradients_of_every_op_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        let x = s.insert("x", rand_mat(&mut rng, 6, 4));
        let w = s.insert("w", rand_mat(&mut rng, 4, 4));
        let b = s.insert("b", rand_mat(&mut rng, 1, 4));
        let gam = s.insert("gamma", rand_mat(&mut rng, 1, 4));
        let bet = s.insert("beta", rand_mat(&mut rng, 1, 4));
        let k = s.insert("k", rand_mat(&mut rng, 1, 3));
        let emb = s.insert("emb", rand_mat(&mut rng, 3, 4));
        let groups = Arc::new(vec![AttnGroup::square(vec![0, 1, 2]), AttnGroup { queries: vec![3, 4, 5], keys: vec![0, 4, 5] }]);
        let err = check(&mut s, |g| {
            let xn = g.param(x);
            let en = g.param(emb);
            let idx: Arc<[usize]> = vec![0, 1, 2, 0, 1, 2].into();
            let e = g.gather_rows(en, idx);
            let h0 = g.add(xn, e);
            let h = g.affine(h0, w, b);
            let h = g.layer_norm(h, gam, bet);
            let q = g.gelu(h);
            let kk = g.tanh(h);
            let a = g.attention(q, kk, h, 2, groups.clone());
            let kn = g.param(k);
            let ks = g.softmax_rows(kn);
            let map: Arc<[usize]> = vec![0, 1, 2, 0, 1, 2].into();
            let r = g.row_scale(a, ks, map);
            let r = g.scale(r, 1.7);
            let pooled = g.group_mean(r, Arc::new(vec![vec![0, 3], vec![1, 4], vec![2, 5]]));
            let maxed = g.group_max(r, Arc::new(vec![vec![0, 1, 2], vec![3, 4, 5]]));
            let flat = g.reshape(pooled, 1, 12);
            let ce = g.cross_entropy(flat, 5);
            let mflat = g.reshape(maxed, 1, 8);
            let m = g.mse(mflat, vec![0.1; 8]);
            let kmse = g.mse(ks, vec![0.2, 0.3, 0.5]);
            g.weighted_sum(vec![(ce, 1.0), (m, 0.5), (kmse, 2.0)])
        });
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn attention_rows_are_probability_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = ParamStore::new();
        let mut g = Graph::new(&s);
        let q = g.input(rand_mat(&mut rng, 5, 4));
        let k = g.input(rand_mat(&mut rng, 5, 4));
        let a = g.attention(q, k, k, 2, Arc::new(vec![AttnGroup::square((0..5).collect())]));
        let (_, heads, probs) = g.attention_probs(a).unwrap();
        assert_eq!(heads, 2);
        for p in probs {
            for row in p.chunks(5) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
