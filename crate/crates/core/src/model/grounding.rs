//! Golden feature grounding.
//!
//! First order: multi-head attention from the consensus feature onto the
//! frames yields per-head frame scores `S` (`heads x v_l`). Second order: a
//! gated recurrent memory scans the score columns in time order, its cell
//! state is mapped to a scalar per frame and rectified into the grounding
//! weights `W_g`. The golden feature is the unnormalized `W_g`-weighted sum
//! of frames.

use ndarray::Array2;
use rand::Rng;

use super::layers::{uniform_fan_in, Linear};
use crate::tape::{Graph, ParamId, ParamStore, Var};

/// Query/key projections for the consensus-to-frame attention.
#[derive(Debug, Clone)]
pub struct GroundingAttention {
    pub query: Linear,
    pub key: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl GroundingAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        query_dim: usize,
        video_dim: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(video_dim % heads == 0, "video width not divisible by heads");
        Self {
            query: Linear::new(store, &format!("{name}.query"), query_dim, video_dim, true, rng),
            key: Linear::new(store, &format!("{name}.key"), video_dim, video_dim, true, rng),
            heads,
            dim: video_dim,
        }
    }

    /// Per-head softmax weights over frames, `heads x v_l`. With several
    /// consensus queries the per-head rows are averaged, which keeps each row
    /// a distribution over the real frames.
    pub fn scores(&self, g: &mut Graph, consensus: Var, video: Var, frames: &[bool]) -> Var {
        let q = self.query.forward(g, consensus);
        let k = self.key.forward(g, video);
        let n_q = g.shape(consensus).0;
        let mask = Array2::from_shape_fn((n_q, frames.len()), |(_, t)| frames[t]);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut rows = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh) = if self.heads == 1 {
                (q, k)
            } else {
                (g.slice_cols(q, h * dh, dh), g.slice_cols(k, h * dh, dh))
            };
            let s = g.matmul_bt(qh, kh);
            let s = g.scale(s, scale);
            let w = g.masked_softmax(s, Some(mask.view()));
            rows.push(if n_q == 1 { w } else { g.mean_rows(w) });
        }
        if rows.len() == 1 {
            rows[0]
        } else {
            g.concat_rows(&rows)
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecurrentWeights {
    pub input: ParamId,
    pub hidden: ParamId,
    pub bias: ParamId,
}

impl RecurrentWeights {
    fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            input: store.insert(
                format!("{name}.input_weight"),
                uniform_fan_in(input_dim, 4 * hidden, input_dim, rng),
            ),
            hidden: store.insert(
                format!("{name}.hidden_weight"),
                uniform_fan_in(hidden, 4 * hidden, hidden, rng),
            ),
            bias: store.insert(format!("{name}.bias"), uniform_fan_in(1, 4 * hidden, hidden, rng)),
        }
    }

    fn cells(&self, g: &mut Graph, x: Var) -> Var {
        let wi = g.param(self.input);
        let wh = g.param(self.hidden);
        let b = g.param(self.bias);
        g.lstm_cells(x, wi, wh, b)
    }
}

/// Recurrent memory plus scalar readout producing `W_g`.
#[derive(Debug, Clone)]
pub struct GroundingMemory {
    pub forward_cell: RecurrentWeights,
    pub backward_cell: Option<RecurrentWeights>,
    pub readout: Linear,
}

/// Initial readout bias. A negative start would leave every frame rectified
/// to zero with no gradient, so the readout begins slightly positive.
pub const READOUT_BIAS_INIT: f64 = 0.1;

impl GroundingMemory {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        heads: usize,
        hidden: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let forward_cell = RecurrentWeights::new(store, &format!("{name}.forward"), heads, hidden, rng);
        let backward_cell =
            bidirectional.then(|| RecurrentWeights::new(store, &format!("{name}.backward"), heads, hidden, rng));
        let width = if bidirectional { 2 * hidden } else { hidden };
        let readout = Linear::new(store, &format!("{name}.readout"), width, 1, true, rng);
        store
            .get_mut(readout.bias.expect("readout has bias"))
            .fill(READOUT_BIAS_INIT);
        Self {
            forward_cell,
            backward_cell,
            readout,
        }
    }

    /// `W_g` as a `v_real x 1` column over the first `v_real` frames of `scores`.
    pub fn weights(&self, g: &mut Graph, scores: Var, v_real: usize) -> Var {
        let cols = g.transpose(scores);
        let x = g.slice_rows(cols, 0, v_real);
        let mut cells = self.forward_cell.cells(g, x);
        if let Some(back) = &self.backward_cell {
            let rev = g.reverse_rows(x);
            let c = back.cells(g, rev);
            let c = g.reverse_rows(c);
            cells = g.concat_cols(&[cells, c]);
        }
        let pre = self.readout.forward(g, cells);
        g.relu(pre)
    }
}

/// Ablation path: head-averaged attention scores used directly as `W_g`.
pub fn raw_attention_weights(g: &mut Graph, scores: Var, v_real: usize) -> Var {
    let avg = g.mean_rows(scores);
    let avg = g.slice_cols(avg, 0, v_real);
    g.transpose(avg)
}

/// `f_g = sum_t W_g[t] * f_v[t]` over the real frames, `1 x d_v`.
pub fn golden_feature(g: &mut Graph, weights: Var, video: Var) -> Var {
    let v_real = g.shape(weights).0;
    let frames = g.slice_rows(video, 0, v_real);
    let row = g.transpose(weights);
    g.matmul(row, frames)
}
