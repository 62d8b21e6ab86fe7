use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::fusion::{ClassifierHeads, SemanticPooling};
use super::{ModelConfig, ModelError, ModelKind, SentimentModel, TextPath};
use crate::data::PaddedBatch;
use crate::tape::{Graph, ParamStore, Var};

/// Text-only classifier: text features, one self-attention layer, max pooling
/// and the two heads. It never reads the batch's video tensors.
#[derive(Debug, Clone)]
pub struct TextOnlyModel {
    config: ModelConfig,
    params: ParamStore,
    text: TextPath,
    semantic: SemanticPooling,
    heads: ClassifierHeads,
}

impl TextOnlyModel {
    /// Uses the text settings of `config` (`text`, `d_text`, `heads`, `ffn_multiplier`).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let text = TextPath::new(&mut params, &config, &mut rng);
        let width = config.d_text;
        let semantic = SemanticPooling::new(
            &mut params,
            "semantic",
            width,
            config.heads,
            config.ffn_multiplier * width,
            &mut rng,
        );
        let heads = ClassifierHeads::new(&mut params, "head", width, &mut rng);
        Ok(Self {
            config,
            params,
            text,
            semantic,
            heads,
        })
    }
}

impl SentimentModel for TextOnlyModel {
    fn kind(&self) -> ModelKind {
        ModelKind::TextOnly
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn row_logits<'p>(&'p self, g: &mut Graph<'p>, batch: &PaddedBatch, row: usize) -> Result<(Var, Var), ModelError> {
        let tokens: Vec<bool> = batch.token_mask.row(row).to_vec();
        if !tokens.iter().any(|&t| t) {
            return Err(ModelError::InvalidConfig(format!("row {row} has no tokens")));
        }
        let text = self.text.features(g, batch, row)?;
        let pooled = self.semantic.forward(g, text, &tokens);
        Ok(self.heads.forward(g, pooled))
    }
}
