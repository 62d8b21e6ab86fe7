//! Consensus semantic learning: a transformer over `[video ; consensus tokens ;
//! text]` in which video and text never attend to each other directly, so the
//! consensus tokens are the only channel between the two modalities.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::EncoderLayer;
use crate::tape::{Graph, Matrix, ParamId, ParamStore, Var};

/// Standard deviation of the consensus-token initialization.
pub const CONSENSUS_TOKEN_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Video(bool),
    Consensus,
    Text(bool),
}

impl Slot {
    fn real(self) -> bool {
        match self {
            Slot::Video(r) | Slot::Text(r) => r,
            Slot::Consensus => true,
        }
    }
}

/// Attention mask over the sequence `[video (v_l) ; consensus (n_c) ; text (l_t)]`,
/// `true` = allowed. Video and text are mutually invisible; consensus rows and
/// columns are open; padded positions are never keys and their own query rows
/// are closed.
pub fn build_consensus_mask(
    v_l: usize,
    n_c: usize,
    l_t: usize,
    frame_mask: &[bool],
    token_mask: &[bool],
) -> Array2<bool> {
    assert_eq!(frame_mask.len(), v_l, "frame mask length");
    assert_eq!(token_mask.len(), l_t, "token mask length");
    let slots: Vec<Slot> = frame_mask
        .iter()
        .map(|&r| Slot::Video(r))
        .chain(std::iter::repeat_n(Slot::Consensus, n_c))
        .chain(token_mask.iter().map(|&r| Slot::Text(r)))
        .collect();
    let n = slots.len();
    Array2::from_shape_fn((n, n), |(q, k)| {
        let (sq, sk) = (slots[q], slots[k]);
        if !sq.real() || !sk.real() {
            return false;
        }
        !matches!(
            (sq, sk),
            (Slot::Video(_), Slot::Text(_)) | (Slot::Text(_), Slot::Video(_))
        )
    })
}

/// Padding-only mask: every real position sees every real position.
pub fn build_padding_mask(real: &[bool]) -> Array2<bool> {
    let n = real.len();
    Array2::from_shape_fn((n, n), |(q, k)| real[q] && real[k])
}

/// One scale's transformer stack, with or without consensus tokens.
#[derive(Debug, Clone)]
pub struct ConsensusEncoder {
    pub tokens: Option<ParamId>,
    pub n_tokens: usize,
    pub layers: Vec<EncoderLayer>,
}

impl ConsensusEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        depth: usize,
        n_tokens: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let tokens = (n_tokens > 0).then(|| {
            let normal = Normal::new(0.0, CONSENSUS_TOKEN_INIT_STD).expect("valid std");
            let init = Matrix::from_shape_fn((n_tokens, dim), |_| normal.sample(rng));
            store.insert(format!("{name}.consensus_tokens"), init)
        });
        let layers = (0..depth)
            .map(|k| EncoderLayer::new(store, &format!("{name}.encoder.{k}"), dim, heads, ffn_dim, rng))
            .collect();
        Self {
            tokens,
            n_tokens,
            layers,
        }
    }

    /// Concatenates `[video ; tokens ; text]` (tokens omitted when absent).
    pub fn sequence(&self, g: &mut Graph, video: Var, text: Var) -> Var {
        match self.tokens {
            Some(t) => {
                let t = g.param(t);
                g.concat_rows(&[video, t, text])
            }
            None => g.concat_rows(&[video, text]),
        }
    }

    /// Runs every layer on every row and returns the whole output sequence.
    pub fn encode_all(&self, g: &mut Graph, seq: Var, mask: &Array2<bool>) -> Var {
        self.layers
            .iter()
            .fold(seq, |x, layer| layer.forward(g, x, mask.view()))
    }

    /// Runs the stack and returns only rows `[start, start + len)` of the last
    /// layer; earlier layers run on every row.
    pub fn encode_rows(&self, g: &mut Graph, seq: Var, mask: &Array2<bool>, start: usize, len: usize) -> Var {
        let (last, rest) = self.layers.split_last().expect("at least one encoder layer");
        let x = rest.iter().fold(seq, |x, layer| layer.forward(g, x, mask.view()));
        last.forward_rows(g, x, mask.view(), start..start + len)
    }

    /// The consensus feature `F_con`: `n_tokens x dim` outputs at the consensus positions.
    pub fn consensus_forward(&self, g: &mut Graph, video: Var, text: Var, mask: &Array2<bool>) -> Var {
        let seq = self.sequence(g, video, text);
        let v = g.shape(video).0;
        self.encode_rows(g, seq, mask, v, self.n_tokens)
    }
}
