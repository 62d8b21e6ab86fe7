use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::consensus::{build_consensus_mask, build_padding_mask, ConsensusEncoder};
use super::fusion::{ClassifierHeads, MultiViewFusion, SemanticPooling};
use super::grounding::{golden_feature, raw_attention_weights, GroundingAttention, GroundingMemory};
use super::layers::Linear;
use super::temporal::TemporalConv;
use super::{Ablation, ModelConfig, ModelError, ModelKind, SentimentModel, TextPath};
use crate::data::PaddedBatch;
use crate::encoders::VideoProjection;
use crate::tape::{Graph, Matrix, ParamStore, Var};

/// Everything that is private to one temporal scale.
#[derive(Debug, Clone)]
struct ScaleBranch {
    /// 1-based convolution layer this branch reads.
    scale: usize,
    video_in: Option<Linear>,
    text_in: Option<Linear>,
    encoder: ConsensusEncoder,
    attention: GroundingAttention,
    memory: Option<usize>,
}

/// The video-context model: multi-scale convolution, per-scale consensus
/// transformer, two-stage grounding, multi-view fusion, self-attention
/// pooling and the opinion/emotion heads.
#[derive(Debug, Clone)]
pub struct VcCsa {
    config: ModelConfig,
    params: ParamStore,
    text: TextPath,
    video_projection: VideoProjection,
    conv: TemporalConv,
    branches: Vec<ScaleBranch>,
    memories: Vec<GroundingMemory>,
    fusion: MultiViewFusion,
    semantic: SemanticPooling,
    heads: ClassifierHeads,
}

/// Grounding intermediates of one scale for one comment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleDiagnostics {
    pub scale: usize,
    /// `heads x v_l` frame attention rows.
    pub attention: Vec<Vec<f64>>,
    /// Grounding weight per real frame.
    pub grounding: Vec<f64>,
    pub golden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowDiagnostics {
    pub comment_id: String,
    pub scales: Vec<ScaleDiagnostics>,
    /// Per real token, attention over the used scales.
    pub attn_scale: Vec<Vec<f64>>,
}

struct ScaleTrace {
    scale: usize,
    scores: Var,
    weights: Var,
    golden: Var,
}

struct RowTrace {
    opinion: Var,
    emotion: Var,
    scales: Vec<ScaleTrace>,
    attn_scale: Var,
    v_real: usize,
    t_real: usize,
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

impl VcCsa {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        let text = TextPath::new(&mut params, c, &mut rng);
        let video_projection = VideoProjection::new(&mut params, "video.projection", c.d_raw, c.d_video, &mut rng);
        let depth = if c.ablation == Ablation::OnlySingleLayer {
            1
        } else {
            c.scales
        };
        let conv = TemporalConv::new(&mut params, "conv", c.d_video, depth, &mut rng);
        let used: Vec<usize> = match c.ablation {
            Ablation::OnlySingleLayer => vec![1],
            Ablation::OnlyLastLayer => vec![c.scales],
            _ => (1..=c.scales).collect(),
        };
        let uses_memory = c.ablation != Ablation::RawAttentionWeight;
        let mut memories = Vec::new();
        if uses_memory && c.memory_shared {
            memories.push(GroundingMemory::new(
                &mut params,
                "grounding.memory",
                c.heads,
                c.memory_hidden,
                c.memory_bidirectional,
                &mut rng,
            ));
        }
        let n_tokens = if c.ablation == Ablation::LastTokenQuery {
            0
        } else {
            c.consensus_tokens
        };
        let ffn = c.ffn_multiplier * c.d_consensus;
        let mut branches = Vec::with_capacity(used.len());
        for &scale in &used {
            let prefix = format!("scale.{scale}");
            let video_in = (c.d_video != c.d_consensus).then(|| {
                Linear::new(&mut params, &format!("{prefix}.video_in"), c.d_video, c.d_consensus, true, &mut rng)
            });
            let text_in = (c.d_text != c.d_consensus).then(|| {
                Linear::new(&mut params, &format!("{prefix}.text_in"), c.d_text, c.d_consensus, true, &mut rng)
            });
            let encoder = ConsensusEncoder::new(
                &mut params,
                &prefix,
                c.d_consensus,
                c.heads,
                ffn,
                c.consensus_layers,
                n_tokens,
                &mut rng,
            );
            let attention = GroundingAttention::new(
                &mut params,
                &format!("{prefix}.grounding.attention"),
                c.d_consensus,
                c.d_video,
                c.heads,
                &mut rng,
            );
            let memory = if !uses_memory {
                None
            } else if c.memory_shared {
                Some(0)
            } else {
                memories.push(GroundingMemory::new(
                    &mut params,
                    &format!("{prefix}.grounding.memory"),
                    c.heads,
                    c.memory_hidden,
                    c.memory_bidirectional,
                    &mut rng,
                ));
                Some(memories.len() - 1)
            };
            branches.push(ScaleBranch {
                scale,
                video_in,
                text_in,
                encoder,
                attention,
                memory,
            });
        }
        let fusion = MultiViewFusion::new(&mut params, "fusion", c.d_text, c.d_video, &mut rng);
        let width = c.d_video + c.d_text;
        let semantic = SemanticPooling::new(&mut params, "semantic", width, c.heads, c.ffn_multiplier * width, &mut rng);
        let heads = ClassifierHeads::new(&mut params, "head", width, &mut rng);
        Ok(Self {
            config,
            params,
            text,
            video_projection,
            conv,
            branches,
            memories,
            fusion,
            semantic,
            heads,
        })
    }

    /// 1-based scale indices feeding the grounding stage.
    pub fn used_scales(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.scale).collect()
    }

    fn video_scales(&self, g: &mut Graph, batch: &PaddedBatch, row: usize) -> Result<(Vec<Var>, Vec<bool>), ModelError> {
        let frames: Vec<bool> = batch.video_mask.row(row).to_vec();
        let raw = batch.video.index_axis(Axis(0), row).to_owned();
        let raw = g.input(raw);
        let projected = self.video_projection.forward(g, raw)?;
        let base = g.row_mask(projected, &frames);
        Ok((self.conv.forward(g, base, &frames), frames))
    }

    /// Output of branch `branch`'s consensus stack at every sequence position
    /// (`[video ; tokens ; text]` rows, or `[video ; text]` without tokens).
    pub fn consensus_outputs(&self, batch: &PaddedBatch, row: usize, branch: usize) -> Result<Matrix, ModelError> {
        let mut g = Graph::new(&self.params);
        let (scales, frames) = self.video_scales(&mut g, batch, row)?;
        let tokens: Vec<bool> = batch.token_mask.row(row).to_vec();
        let text = self.text.features(&mut g, batch, row)?;
        let b = &self.branches[branch];
        let (v, t) = self.branch_inputs(&mut g, b, scales[b.scale - 1], text);
        let mask = self.branch_mask(b, &frames, &tokens);
        let seq = b.encoder.sequence(&mut g, v, t);
        let out = b.encoder.encode_all(&mut g, seq, &mask);
        Ok(g.value(out).clone())
    }

    fn branch_inputs(&self, g: &mut Graph, b: &ScaleBranch, video: Var, text: Var) -> (Var, Var) {
        let v = match &b.video_in {
            Some(l) => l.forward(g, video),
            None => video,
        };
        let t = match &b.text_in {
            Some(l) => l.forward(g, text),
            None => text,
        };
        (v, t)
    }

    fn branch_mask(&self, b: &ScaleBranch, frames: &[bool], tokens: &[bool]) -> Array2<bool> {
        if b.encoder.tokens.is_some() {
            build_consensus_mask(frames.len(), b.encoder.n_tokens, tokens.len(), frames, tokens)
        } else {
            let real: Vec<bool> = frames.iter().chain(tokens).copied().collect();
            build_padding_mask(&real)
        }
    }

    fn trace<'p>(&'p self, g: &mut Graph<'p>, batch: &PaddedBatch, row: usize) -> Result<RowTrace, ModelError> {
        let (scales, frames) = self.video_scales(g, batch, row)?;
        let tokens: Vec<bool> = batch.token_mask.row(row).to_vec();
        let v_real = frames.iter().filter(|&&f| f).count();
        let t_real = tokens.iter().filter(|&&t| t).count();
        if v_real == 0 || t_real == 0 {
            return Err(ModelError::InvalidConfig(format!(
                "row {row} has {v_real} frames and {t_real} tokens"
            )));
        }
        let text = self.text.features(g, batch, row)?;
        let mut traces = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let video = scales[b.scale - 1];
            let (v, t) = self.branch_inputs(g, b, video, text);
            let mask = self.branch_mask(b, &frames, &tokens);
            let seq = b.encoder.sequence(g, v, t);
            let query = match b.encoder.tokens {
                Some(_) => b.encoder.encode_rows(g, seq, &mask, frames.len(), b.encoder.n_tokens),
                None => b.encoder.encode_rows(g, seq, &mask, frames.len() + t_real - 1, 1),
            };
            let scores = b.attention.scores(g, query, video, &frames);
            let weights = match b.memory {
                Some(m) => self.memories[m].weights(g, scores, v_real),
                None => raw_attention_weights(g, scores, v_real),
            };
            let golden = golden_feature(g, weights, video);
            traces.push(ScaleTrace {
                scale: b.scale,
                scores,
                weights,
                golden,
            });
        }
        let goldens: Vec<Var> = traces.iter().map(|t| t.golden).collect();
        let golden = if goldens.len() == 1 {
            goldens[0]
        } else {
            g.concat_rows(&goldens)
        };
        let (fused, attn_scale) = self.fusion.forward(g, text, golden);
        let joined = g.concat_cols(&[fused, text]);
        let pooled = self.semantic.forward(g, joined, &tokens);
        let (opinion, emotion) = self.heads.forward(g, pooled);
        Ok(RowTrace {
            opinion,
            emotion,
            scales: traces,
            attn_scale,
            v_real,
            t_real,
        })
    }

    /// Logits plus grounding diagnostics for every row.
    pub fn forward(&self, batch: &PaddedBatch) -> Result<(Matrix, Matrix, Vec<RowDiagnostics>), ModelError> {
        let mut opinion = Matrix::zeros((batch.len(), super::N_OPINION));
        let mut emotion = Matrix::zeros((batch.len(), super::N_EMOTION));
        let mut diags = Vec::with_capacity(batch.len());
        for row in 0..batch.len() {
            let mut g = Graph::new(&self.params);
            let tr = self.trace(&mut g, batch, row)?;
            opinion.row_mut(row).assign(&g.value(tr.opinion).row(0));
            emotion.row_mut(row).assign(&g.value(tr.emotion).row(0));
            let scales = tr
                .scales
                .iter()
                .map(|s| {
                    let attention = g.value(s.scores);
                    let attention = attention.slice(ndarray::s![.., ..tr.v_real]).to_owned();
                    ScaleDiagnostics {
                        scale: s.scale,
                        attention: to_rows(&attention),
                        grounding: g.value(s.weights).column(0).to_vec(),
                        golden: g.value(s.golden).row(0).to_vec(),
                    }
                })
                .collect();
            let attn = g.value(tr.attn_scale).slice(ndarray::s![..tr.t_real, ..]).to_owned();
            diags.push(RowDiagnostics {
                comment_id: batch.comment_ids[row].clone(),
                scales,
                attn_scale: to_rows(&attn),
            });
        }
        Ok((opinion, emotion, diags))
    }
}

impl SentimentModel for VcCsa {
    fn kind(&self) -> ModelKind {
        ModelKind::VcCsa
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
        let tr = self.trace(g, batch, row)?;
        Ok((tr.opinion, tr.emotion))
    }
}
