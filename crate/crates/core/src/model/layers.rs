//! Reusable building blocks: affine maps, multi-head attention and the
//! post-norm transformer encoder layer.

use std::ops::Range;

use ndarray::{s, ArrayView2};
use rand::Rng;

use crate::tape::{Graph, Matrix, ParamId, ParamStore, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn uniform_fan_in(rows: usize, cols: usize, fan_in: usize, rng: &mut impl Rng) -> Matrix {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// `x W + b` applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.insert(format!("{name}.weight"), uniform_fan_in(in_dim, out_dim, in_dim, rng));
        let bias = bias.then(|| store.insert(format!("{name}.bias"), uniform_fan_in(1, out_dim, in_dim, rng)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.insert(format!("{name}.gain"), Matrix::ones((1, dim))),
            bias: store.insert(format!("{name}.bias"), Matrix::zeros((1, dim))),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Scaled dot-product attention split over `heads` column blocks.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut impl Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "width {dim} not divisible by {heads} heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, true, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, true, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, true, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, true, rng),
            heads,
            dim,
        }
    }

    /// `mask[q, k] == true` lets query row `q` see key row `k`.
    pub fn forward(&self, g: &mut Graph, xq: Var, xkv: Var, mask: Option<ArrayView2<bool>>) -> Var {
        let q = self.query.forward(g, xq);
        let k = self.key.forward(g, xkv);
        let v = self.value.forward(g, xkv);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dh, dh),
                    g.slice_cols(k, h * dh, dh),
                    g.slice_cols(v, h * dh, dh),
                )
            };
            let scores = g.matmul_bt(qh, kh);
            let scores = g.scale(scores, scale);
            let weights = g.masked_softmax(scores, mask);
            outs.push(g.matmul(weights, vh));
        }
        let joined = if outs.len() == 1 {
            outs[0]
        } else {
            g.concat_cols(&outs)
        };
        self.output.forward(g, joined)
    }
}

/// Post-norm encoder layer: `LN(x + MHA(x))` then `LN(h + FFN(h))`.
#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn_up: Linear,
    pub ffn_down: Linear,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), dim, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            ffn_up: Linear::new(store, &format!("{name}.ffn.up"), dim, ffn_dim, true, rng),
            ffn_down: Linear::new(store, &format!("{name}.ffn.down"), ffn_dim, dim, true, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
        }
    }

    /// Runs the layer for the query rows in `rows` only; every row of `x` is a key.
    pub fn forward_rows(&self, g: &mut Graph, x: Var, mask: ArrayView2<bool>, rows: Range<usize>) -> Var {
        let n = g.shape(x).0;
        let xq = if rows == (0..n) {
            x
        } else {
            g.slice_rows(x, rows.start, rows.len())
        };
        let mask_q = mask.slice(s![rows, ..]);
        let attended = self.attention.forward(g, xq, x, Some(mask_q));
        let h = g.add(xq, attended);
        let h = self.norm1.forward(g, h);
        let up = self.ffn_up.forward(g, h);
        let up = g.relu(up);
        let down = self.ffn_down.forward(g, up);
        let out = g.add(h, down);
        self.norm2.forward(g, out)
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: ArrayView2<bool>) -> Var {
        let n = g.shape(x).0;
        self.forward_rows(g, x, mask, 0..n)
    }
}
