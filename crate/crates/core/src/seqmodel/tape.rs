//! Reverse-mode accumulation over a recorded list of tensor operations.
//!
//! Every node stores its forward value plus whatever the backward rule
//! needs. Parameters are never copied onto the tape: ops refer to them by
//! [`ParamId`] and their gradients are accumulated straight into a flat
//! vector laid out like [`ModelParams`].

use rand::Rng;

use super::kernels::{self, dot, gelu, gelu_grad};
use super::params::{ModelParams, ParamId};
use crate::codec::TokenId;

pub(crate) type NodeId = usize;

enum Op {
    /// Token plus positional embedding.
    Embed { ids: Vec<TokenId> },
    Linear { x: NodeId, w: ParamId, b: ParamId },
    LayerNorm { x: NodeId, g: ParamId, b: ParamId, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Dropout { x: NodeId, mask: Vec<f64> },
    /// Multi-head causal self-attention over a packed `[q | k | v]` input.
    Attention { qkv: NodeId, heads: usize, probs: Vec<f64> },
    /// Output projection, log-softmax and gather of the target token, for a
    /// subset of rows. Produces one log-probability per selected row.
    TargetLogProbs {
        h: NodeId,
        rows: Vec<usize>,
        targets: Vec<TokenId>,
        w: ParamId,
        b: ParamId,
        probs: Vec<f64>,
    },
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

pub(crate) struct Tape<'p> {
    params: &'p ModelParams,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ModelParams) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(32),
        }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    pub fn embed(&mut self, ids: &[TokenId]) -> NodeId {
        let p = self.params;
        let d = p.config().d_model;
        let tok = p.tensor(p.ids.tok_emb);
        let pos = p.tensor(p.ids.pos_emb);
        let mut value = vec![0.0; ids.len() * d];
        for (r, &t) in ids.iter().enumerate() {
            let t = t as usize;
            for c in 0..d {
                value[r * d + c] = tok[t * d + c] + pos[r * d + c];
            }
        }
        self.push(ids.len(), d, value, Op::Embed { ids: ids.to_vec() })
    }

    pub fn linear(&mut self, x: NodeId, w: ParamId, b: ParamId) -> NodeId {
        let spec = self.params.spec(w);
        let (k, n) = (spec.rows, spec.cols);
        let rows = self.nodes[x].rows;
        debug_assert_eq!(self.nodes[x].cols, k);
        let mut value = vec![0.0; rows * n];
        kernels::matmul(rows, k, n, &self.nodes[x].value, self.params.tensor(w), &mut value, 0.0);
        kernels::add_bias(&mut value, self.params.tensor(b));
        self.push(rows, n, value, Op::Linear { x, w, b })
    }

    pub fn layer_norm(&mut self, x: NodeId, g: ParamId, b: ParamId) -> NodeId {
        let (rows, cols) = (self.nodes[x].rows, self.nodes[x].cols);
        let mut value = vec![0.0; rows * cols];
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        kernels::layer_norm(
            &self.nodes[x].value,
            cols,
            self.params.tensor(g),
            self.params.tensor(b),
            &mut value,
            Some(&mut xhat),
            Some(&mut rstd),
        );
        self.push(rows, cols, value, Op::LayerNorm { x, g, b, xhat, rstd })
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let n = &self.nodes[x];
        let (rows, cols) = (n.rows, n.cols);
        let value = n.value.iter().map(|&v| gelu(v)).collect();
        self.push(rows, cols, value, Op::Gelu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (rows, cols) = (self.nodes[a].rows, self.nodes[a].cols);
        debug_assert_eq!(self.nodes[b].value.len(), rows * cols);
        let value = self.nodes[a]
            .value
            .iter()
            .zip(&self.nodes[b].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(rows, cols, value, Op::Add { a, b })
    }

    /// Inverted dropout. Returns `x` unchanged when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return x;
        }
        let keep = 1.0 / (1.0 - p);
        let (rows, cols) = (self.nodes[x].rows, self.nodes[x].cols);
        let mask: Vec<f64> = (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let value = self.nodes[x].value.iter().zip(&mask).map(|(v, m)| v * m).collect();
        self.push(rows, cols, value, Op::Dropout { x, mask })
    }

    pub fn attention(&mut self, qkv: NodeId, heads: usize) -> NodeId {
        let (l, three_d) = (self.nodes[qkv].rows, self.nodes[qkv].cols);
        let d = three_d / 3;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let src = &self.nodes[qkv].value;
        let mut probs = vec![0.0; heads * l * l];
        let mut out = vec![0.0; l * d];
        let mut scores = vec![0.0; l];
        for h in 0..heads {
            let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
            for i in 0..l {
                let q = &src[i * three_d + qo..i * three_d + qo + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..=i {
                    let k = &src[j * three_d + ko..j * three_d + ko + dh];
                    scores[j] = scale * dot(q, k);
                    max = max.max(scores[j]);
                }
                let mut sum = 0.0;
                for s in scores.iter_mut().take(i + 1) {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let prow = &mut probs[(h * l + i) * l..(h * l + i) * l + l];
                let orow = &mut out[i * d + h * dh..i * d + h * dh + dh];
                for j in 0..=i {
                    let p = scores[j] / sum;
                    prow[j] = p;
                    let v = &src[j * three_d + vo..j * three_d + vo + dh];
                    for c in 0..dh {
                        orow[c] += p * v[c];
                    }
                }
            }
        }
        self.push(l, d, out, Op::Attention { qkv, heads, probs })
    }

    pub fn target_logprobs(
        &mut self,
        h: NodeId,
        rows: &[usize],
        targets: &[TokenId],
        w: ParamId,
        b: ParamId,
    ) -> NodeId {
        debug_assert_eq!(rows.len(), targets.len());
        let spec = self.params.spec(w);
        let (d, v) = (spec.rows, spec.cols);
        let hv = &self.nodes[h].value;
        let n = rows.len();
        let mut sel = vec![0.0; n * d];
        for (i, &r) in rows.iter().enumerate() {
            sel[i * d..(i + 1) * d].copy_from_slice(&hv[r * d..(r + 1) * d]);
        }
        let mut logits = vec![0.0; n * v];
        kernels::matmul(n, d, v, &sel, self.params.tensor(w), &mut logits, 0.0);
        kernels::add_bias(&mut logits, self.params.tensor(b));
        let mut out = vec![0.0; n];
        for (i, row) in logits.chunks_exact_mut(v).enumerate() {
            kernels::log_softmax_in_place(row);
            out[i] = row[targets[i] as usize];
            for x in row.iter_mut() {
                *x = x.exp();
            }
        }
        self.push(
            n,
            1,
            out,
            Op::TargetLogProbs {
                h,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
                w,
                b,
                probs: logits,
            },
        )
    }

    /// Back-propagates `seed` (the gradient of some scalar with respect to
    /// node `out`) and adds the parameter gradients into `grads`.
    pub fn backward(&self, out: NodeId, seed: &[f64], grads: &mut [f64]) {
        assert_eq!(seed.len(), self.nodes[out].value.len());
        assert_eq!(grads.len(), self.params.len());
        let mut node_grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[out] = Some(seed.to_vec());

        fn slot<'a>(g: &'a mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'a mut Vec<f64> {
            g[id].get_or_insert_with(|| vec![0.0; len])
        }

        let params = self.params;
        let offset = |id: ParamId| {
            let s = params.spec(id);
            (s.offset, s.offset + s.len())
        };

        for idx in (0..=out).rev() {
            let Some(g) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Embed { ids } => {
                    let d = node.cols;
                    let (ts, _) = offset(params.ids.tok_emb);
                    let (ps, _) = offset(params.ids.pos_emb);
                    for (r, &t) in ids.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let tok = &mut grads[ts + t as usize * d..ts + (t as usize + 1) * d];
                        for (a, b) in tok.iter_mut().zip(gr) {
                            *a += b;
                        }
                        let pos = &mut grads[ps + r * d..ps + (r + 1) * d];
                        for (a, b) in pos.iter_mut().zip(gr) {
                            *a += b;
                        }
                    }
                }
                Op::Linear { x, w, b } => {
                    let spec = params.spec(*w);
                    let (k, n) = (spec.rows, spec.cols);
                    let rows = node.rows;
                    let xv = &self.nodes[*x].value;
                    let (ws, we) = offset(*w);
                    kernels::matmul_at_acc(rows, k, n, xv, &g, &mut grads[ws..we]);
                    let (bs, be) = offset(*b);
                    for row in g.chunks_exact(n) {
                        for (a, v) in grads[bs..be].iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    let dx = slot(&mut node_grads, *x, rows * k);
                    kernels::matmul_bt_acc(rows, n, k, &g, params.tensor(*w), dx);
                }
                Op::LayerNorm { x, g: gid, b, xhat, rstd } => {
                    let cols = node.cols;
                    let gain = params.tensor(*gid);
                    let (gs, _) = offset(*gid);
                    let (bs, _) = offset(*b);
                    let dx = slot(&mut node_grads, *x, node.rows * cols);
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..node.rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..cols {
                            grads[gs + c] += gr[c] * xh[c];
                            grads[bs + c] += gr[c];
                            dxhat[c] = gr[c] * gain[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xh[c];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for c in 0..cols {
                            dx[r * cols + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
                Op::Gelu { x } => {
                    let xv = &self.nodes[*x].value;
                    let dx = slot(&mut node_grads, *x, xv.len());
                    for i in 0..xv.len() {
                        dx[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
                Op::Add { a, b } => {
                    for id in [*a, *b] {
                        let dx = slot(&mut node_grads, id, g.len());
                        for (d, v) in dx.iter_mut().zip(&g) {
                            *d += v;
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let dx = slot(&mut node_grads, *x, g.len());
                    for i in 0..g.len() {
                        dx[i] += g[i] * mask[i];
                    }
                }
                Op::Attention { qkv, heads, probs } => {
                    let l = node.rows;
                    let d = node.cols;
                    let three_d = 3 * d;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let src = &self.nodes[*qkv].value;
                    let dsrc = slot(&mut node_grads, *qkv, l * three_d);
                    let mut dp = vec![0.0; l];
                    for h in 0..*heads {
                        let (qo, ko, vo) = (h * dh, d + h * dh, 2 * d + h * dh);
                        for i in 0..l {
                            let go = &g[i * d + h * dh..i * d + h * dh + dh];
                            let prow = &probs[(h * l + i) * l..(h * l + i) * l + l];
                            let mut weighted = 0.0;
                            for j in 0..=i {
                                let v = &src[j * three_d + vo..j * three_d + vo + dh];
                                dp[j] = dot(go, v);
                                weighted += prow[j] * dp[j];
                                let dv = &mut dsrc[j * three_d + vo..j * three_d + vo + dh];
                                for c in 0..dh {
                                    dv[c] += prow[j] * go[c];
                                }
                            }
                            for j in 0..=i {
                                let ds = prow[j] * (dp[j] - weighted) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    let kc = src[j * three_d + ko + c];
                                    let qc = src[i * three_d + qo + c];
                                    dsrc[i * three_d + qo + c] += ds * kc;
                                    dsrc[j * three_d + ko + c] += ds * qc;
                                }
                            }
                        }
                    }
                }
                Op::TargetLogProbs {
                    h,
                    rows,
                    targets,
                    w,
                    b,
                    probs,
                } => {
                    let spec = params.spec(*w);
                    let (d, v) = (spec.rows, spec.cols);
                    let n = rows.len();
                    let mut dlogits = vec![0.0; n * v];
                    for i in 0..n {
                        let s = g[i];
                        let drow = &mut dlogits[i * v..(i + 1) * v];
                        let prow = &probs[i * v..(i + 1) * v];
                        for j in 0..v {
                            drow[j] = -s * prow[j];
                        }
                        drow[targets[i] as usize] += s;
                    }
                    let hv = &self.nodes[*h].value;
                    let mut sel = vec![0.0; n * d];
                    for (i, &r) in rows.iter().enumerate() {
                        sel[i * d..(i + 1) * d].copy_from_slice(&hv[r * d..(r + 1) * d]);
                    }
                    let (ws, we) = offset(*w);
                    kernels::matmul_at_acc(n, d, v, &sel, &dlogits, &mut grads[ws..we]);
                    let (bs, be) = offset(*b);
                    for row in dlogits.chunks_exact(v) {
                        for (a, x) in grads[bs..be].iter_mut().zip(row) {
                            *a += x;
                        }
                    }
                    let mut dsel = vec![0.0; n * d];
                    kernels::matmul_bt_acc(n, v, d, &dlogits, params.tensor(*w), &mut dsel);
                    let hrows = self.nodes[*h].rows;
                    let dh = slot(&mut node_grads, *h, hrows * d);
                    for (i, &r) in rows.iter().enumerate() {
                        for c in 0..d {
                            dh[r * d + c] += dsel[i * d + c];
                        }
                    }
                }
            }
        }
    }
}
