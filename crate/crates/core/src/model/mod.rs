//! The video-context comment sentiment model and the text-only baseline.
//!
//! Every model runs one [`Graph`] per batch row at the batch's padded
//! lengths, with masks keeping padded frames and tokens out of every
//! attention, pooling and weighted sum.

mod baseline;
mod checkpoint;
pub mod consensus;
pub mod fusion;
pub mod grounding;
pub mod layers;
pub mod temporal;
mod vccsa;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::TextOnlyModel;
pub use checkpoint::{load_checkpoint, load_model, save_checkpoint, AnyModel, Checkpoint, ModelKind};
pub use fusion::{argmax_rows, probabilities, total_loss, N_EMOTION, N_OPINION};
pub use vccsa::{RowDiagnostics, ScaleDiagnostics, VcCsa};

use crate::data::PaddedBatch;
use crate::encoders::{EncoderError, TextEmbedding};
use crate::tape::{GradStore, Graph, Matrix, ParamStore, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("batch carries no precomputed text features but the model expects them")]
    MissingTextFeatures,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

/// Which module substitution is active (the full model plus four ablations).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Only the first convolution scale feeds grounding.
    OnlySingleLayer,
    /// Only the last convolution scale feeds grounding.
    OnlyLastLayer,
    /// Consensus tokens replaced by the last text position of an unmasked transformer.
    LastTokenQuery,
    /// Head-averaged attention scores used directly as grounding weights.
    RawAttentionWeight,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::OnlySingleLayer,
        Ablation::OnlyLastLayer,
        Ablation::LastTokenQuery,
        Ablation::RawAttentionWeight,
    ];

    /// The four substitutions compared against the full model.
    pub const MODES: [Ablation; 4] = [
        Ablation::OnlySingleLayer,
        Ablation::OnlyLastLayer,
        Ablation::LastTokenQuery,
        Ablation::RawAttentionWeight,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::OnlySingleLayer => "only_single_layer",
            Ablation::OnlyLastLayer => "only_last_layer",
            Ablation::LastTokenQuery => "last_token_query",
            Ablation::RawAttentionWeight => "raw_attention_weight",
        }
    }

    /// Row label used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Ablation::Full => "VC-CSA",
            Ablation::OnlySingleLayer => "Only single layer",
            Ablation::OnlyLastLayer => "Only last layer",
            Ablation::LastTokenQuery => "-LT",
            Ablation::RawAttentionWeight => "-AttnS",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .iter()
            .copied()
            .find(|a| a.key() == s)
            .ok_or_else(|| {
                let keys: Vec<_> = Ablation::ALL.iter().map(|a| a.key()).collect();
                format!("unknown ablation mode {s:?} (expected one of {})", keys.join(", "))
            })
    }
}

/// Source of the text feature sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextEncoder {
    /// Trainable token table of `vocab_size` rows plus sinusoidal positions.
    Embedding { vocab_size: usize },
    /// Frozen precomputed features carried in the batch.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Raw frame feature width.
    pub d_raw: usize,
    pub text: TextEncoder,
    /// Number of stacked convolution layers (temporal scales).
    pub scales: usize,
    /// Transformer layers per scale in the consensus encoder.
    pub consensus_layers: usize,
    pub consensus_tokens: usize,
    pub heads: usize,
    pub d_video: usize,
    pub d_text: usize,
    pub d_consensus: usize,
    /// Feed-forward width as a multiple of the layer width.
    pub ffn_multiplier: usize,
    /// Hidden size of the grounding recurrence.
    pub memory_hidden: usize,
    pub memory_bidirectional: bool,
    /// One recurrence shared by all scales instead of one per scale.
    pub memory_shared: bool,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Small configuration for CPU training on synthetic corpora.
    pub fn desk(d_raw: usize, vocab_size: usize) -> Self {
        Self {
            d_raw,
            text: TextEncoder::Embedding { vocab_size },
            scales: 4,
            consensus_layers: 1,
            consensus_tokens: 1,
            heads: 4,
            d_video: 64,
            d_text: 64,
            d_consensus: 64,
            ffn_multiplier: 2,
            memory_hidden: 8,
            memory_bidirectional: false,
            memory_shared: false,
            ablation: Ablation::Full,
        }
    }

    /// Full-width configuration: 768-wide features, 4 scales, one consensus
    /// layer and one consensus token.
    pub fn paper(d_raw: usize, text: TextEncoder) -> Self {
        Self {
            d_raw,
            text,
            scales: 4,
            consensus_layers: 1,
            consensus_tokens: 1,
            heads: 12,
            d_video: 768,
            d_text: 768,
            d_consensus: 768,
            ffn_multiplier: 4,
            memory_hidden: 8,
            memory_bidirectional: false,
            memory_shared: false,
            ablation: Ablation::Full,
        }
    }

    /// The configuration used for gradient checks.
    pub fn tiny(d_raw: usize, vocab_size: usize) -> Self {
        Self {
            d_raw,
            text: TextEncoder::Embedding { vocab_size },
            scales: 2,
            consensus_layers: 1,
            consensus_tokens: 1,
            heads: 2,
            d_video: 16,
            d_text: 16,
            d_consensus: 16,
            ffn_multiplier: 2,
            memory_hidden: 8,
            memory_bidirectional: false,
            memory_shared: false,
            ablation: Ablation::Full,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.scales < 1 {
            return bad("scales must be >= 1".into());
        }
        if self.consensus_layers < 1 {
            return bad("consensus_layers must be >= 1".into());
        }
        if self.consensus_tokens < 1 {
            return bad("consensus_tokens must be >= 1".into());
        }
        if self.heads < 1 {
            return bad("heads must be >= 1".into());
        }
        for (name, d) in [
            ("d_video", self.d_video),
            ("d_text", self.d_text),
            ("d_consensus", self.d_consensus),
        ] {
            if d == 0 || d % self.heads != 0 {
                return bad(format!("{name}={d} must be a positive multiple of heads={}", self.heads));
            }
        }
        if self.d_raw == 0 {
            return bad("d_raw must be positive".into());
        }
        if self.ffn_multiplier == 0 || self.memory_hidden == 0 {
            return bad("ffn_multiplier and memory_hidden must be positive".into());
        }
        if let TextEncoder::Embedding { vocab_size } = self.text {
            if vocab_size < 2 {
                return bad("vocabulary must contain at least the reserved ids".into());
            }
        }
        Ok(())
    }
}

/// Text features for one batch row, either embedded from token ids or taken
/// from precomputed features.
#[derive(Debug, Clone)]
pub(crate) struct TextPath {
    pub embedding: Option<TextEmbedding>,
    pub dim: usize,
}

impl TextPath {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let embedding = match config.text {
            TextEncoder::Embedding { vocab_size } => Some(TextEmbedding::new(
                store,
                "text.embedding",
                vocab_size,
                config.d_text,
                rng,
            )),
            TextEncoder::External => None,
        };
        Self {
            embedding,
            dim: config.d_text,
        }
    }

    pub fn features(&self, g: &mut Graph, batch: &PaddedBatch, row: usize) -> Result<Var, ModelError> {
        match &self.embedding {
            Some(emb) => {
                let ids: Vec<usize> = batch.tokens.row(row).to_vec();
                Ok(emb.forward(g, &ids)?)
            }
            None => {
                let tf = batch.text_features.as_ref().ok_or(ModelError::MissingTextFeatures)?;
                let m = tf.index_axis(ndarray::Axis(0), row).to_owned();
                if m.ncols() != self.dim {
                    return Err(EncoderError::DimMismatch {
                        expected: self.dim,
                        actual: m.ncols(),
                    }
                    .into());
                }
                Ok(g.input(m))
            }
        }
    }
}

/// Shared interface of the trainable classifiers.
pub trait SentimentModel {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Records one row's forward pass and returns its `(opinion, emotion)` logit rows.
    fn row_logits<'p>(
        &'p self,
        g: &mut Graph<'p>,
        batch: &PaddedBatch,
        row: usize,
    ) -> Result<(Var, Var), ModelError>;

    /// `(B x 3, B x 8)` logits.
    fn predict(&self, batch: &PaddedBatch) -> Result<(Matrix, Matrix), ModelError> {
        let mut opinion = Matrix::zeros((batch.len(), N_OPINION));
        let mut emotion = Matrix::zeros((batch.len(), N_EMOTION));
        for row in 0..batch.len() {
            let mut g = Graph::new(self.params());
            let (o, e) = self.row_logits(&mut g, batch, row)?;
            opinion.row_mut(row).assign(&g.value(o).row(0));
            emotion.row_mut(row).assign(&g.value(e).row(0));
        }
        Ok((opinion, emotion))
    }

    /// Batch-mean total loss and its gradient.
    fn loss_and_grad(&self, batch: &PaddedBatch) -> Result<(f64, GradStore), ModelError> {
        let mut grads = GradStore::zeros_like(self.params());
        let n = batch.len();
        let mut total = 0.0;
        for row in 0..n {
            let (ol, el) = (batch.opinion_labels[row], batch.emotion_labels[row]);
            if ol >= N_OPINION {
                return Err(ModelError::LabelOutOfRange {
                    label: ol,
                    classes: N_OPINION,
                });
            }
            if el >= N_EMOTION {
                return Err(ModelError::LabelOutOfRange {
                    label: el,
                    classes: N_EMOTION,
                });
            }
            let mut g = Graph::new(self.params());
            let (o, e) = self.row_logits(&mut g, batch, row)?;
            let lo = g.softmax_cross_entropy(o, ol);
            let le = g.softmax_cross_entropy(e, el);
            let loss = g.add(lo, le);
            total += g.value(loss)[[0, 0]];
            g.backward(loss, 1.0 / n as f64, &mut grads);
        }
        Ok((total / n.max(1) as f64, grads))
    }

    /// Batch-mean total loss without gradients.
    fn loss(&self, batch: &PaddedBatch) -> Result<f64, ModelError> {
        let (o, e) = self.predict(batch)?;
        total_loss(&o, &e, &batch.opinion_labels, &batch.emotion_labels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_keys_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.key().parse::<Ablation>().unwrap(), a);
        }
        assert!("lt".parse::<Ablation>().is_err());
        assert_eq!(Ablation::OnlyLastLayer.display_name(), "Only last layer");
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::desk(16, 100).validate().is_ok());
        assert!(ModelConfig::paper(1024, TextEncoder::External).validate().is_ok());
        let mut c = ModelConfig::tiny(4, 10);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(4, 10);
        c.consensus_tokens = 0;
        assert!(c.validate().is_err());
    }
}
