//! Multi-view fusion of golden features with comment tokens, the pooled
//! semantic feature and the two classification heads.

use ndarray::Array2;
use rand::Rng;

use super::layers::{EncoderLayer, Linear};
use super::ModelError;
use crate::tape::{masked_softmax_rows, Graph, Matrix, ParamStore, Var};

pub const N_OPINION: usize = 3;
pub const N_EMOTION: usize = 8;

/// Per-token single-head attention over the scale golden features.
#[derive(Debug, Clone)]
pub struct MultiViewFusion {
    pub query: Linear,
    pub key: Linear,
    pub dim: usize,
}

impl MultiViewFusion {
    pub fn new(store: &mut ParamStore, name: &str, text_dim: usize, video_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), text_dim, video_dim, true, rng),
            key: Linear::new(store, &format!("{name}.key"), video_dim, video_dim, true, rng),
            dim: video_dim,
        }
    }

    /// Returns `(F_g, AttnScale)`: `l_t x d_v` fused features and the
    /// `l_t x n_scales` attention rows. Values are the unprojected golden features.
    pub fn forward(&self, g: &mut Graph, text: Var, golden: Var) -> (Var, Var) {
        let q = self.query.forward(g, text);
        let k = self.key.forward(g, golden);
        let s = g.matmul_bt(q, k);
        let s = g.scale(s, 1.0 / (self.dim as f64).sqrt());
        let a = g.masked_softmax(s, None);
        (g.matmul(a, golden), a)
    }
}

/// Self-attention over `[F_g ; f_t]` tokens followed by max pooling over real tokens.
#[derive(Debug, Clone)]
pub struct SemanticPooling {
    pub layer: EncoderLayer,
}

impl SemanticPooling {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, ffn_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            layer: EncoderLayer::new(store, name, dim, heads, ffn_dim, rng),
        }
    }

    /// `tokens` is `l_t x dim`; returns `1 x dim`.
    pub fn forward(&self, g: &mut Graph, tokens: Var, real: &[bool]) -> Var {
        let n = real.len();
        let mask = Array2::from_shape_fn((n, n), |(_, k)| real[k]);
        let h = self.layer.forward(g, tokens, mask.view());
        g.max_pool_rows(h, real)
    }
}

#[derive(Debug, Clone)]
pub struct ClassifierHeads {
    pub opinion: Linear,
    pub emotion: Linear,
}

impl ClassifierHeads {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            opinion: Linear::new(store, &format!("{name}.opinion"), dim, N_OPINION, true, rng),
            emotion: Linear::new(store, &format!("{name}.emotion"), dim, N_EMOTION, true, rng),
        }
    }

    /// `(opinion logits 1x3, emotion logits 1x8)`.
    pub fn forward(&self, g: &mut Graph, pooled: Var) -> (Var, Var) {
        (self.opinion.forward(g, pooled), self.emotion.forward(g, pooled))
    }
}

/// Row-wise softmax probabilities.
pub fn probabilities(logits: &Matrix) -> Matrix {
    masked_softmax_rows(logits.view(), None)
}

/// Index of the largest logit per row; ties resolve to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}

/// Batch-mean of `CE(opinion) + CE(emotion)` with unit weights.
pub fn total_loss(
    opinion_logits: &Matrix,
    emotion_logits: &Matrix,
    opinion_labels: &[usize],
    emotion_labels: &[usize],
) -> Result<f64, ModelError> {
    let ce = |logits: &Matrix, labels: &[usize]| -> Result<f64, ModelError> {
        if logits.nrows() != labels.len() {
            return Err(ModelError::LengthMismatch(logits.nrows(), labels.len()));
        }
        let mut total = 0.0;
        for (row, &label) in logits.outer_iter().zip(labels) {
            if label >= row.len() {
                return Err(ModelError::LabelOutOfRange {
                    label,
                    classes: row.len(),
                });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        Ok(total)
    };
    let n = opinion_logits.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    Ok((ce(opinion_logits, opinion_labels)? + ce(emotion_logits, emotion_labels)?) / n as f64)
}
