//! Run configuration: one flat TOML table plus `--set key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vccsa::data::Granularity;
use vccsa::model::{Ablation, ModelKind, TextEncoder};
use vccsa::synthgen::GeneratorConfig;
use vccsa::{ModelConfig, TrainConfig};

use crate::CliError;

/// Every key, its type, default and meaning; printed by `--help`.
pub const KEYS: &[(&str, &str, &str, &str)] = &[
    ("data_dir", "path", "$CSMV_DATA_DIR", "corpus directory read by train/eval/ablate/sweep/inspect/stats/check"),
    ("split_file", "path", "<data_dir>/split.json if present", "split assignment; otherwise one is drawn from split_seed"),
    ("split_seed", "int", "0", "seed of the 70/10/20 split drawn when no split file exists"),
    ("granularity", "str", "comment", "split unit: comment | video"),
    ("text_features", "path", "unset", "JSON index of precomputed per-comment text feature files; unset = learned embeddings"),
    ("seed", "int", "0", "generator seed (gen) and model/shuffle seed (train, eval)"),
    ("n_videos", "int", "500", "gen: number of videos"),
    ("comments_per_video", "int", "8", "gen: comments per video"),
    ("n_topics", "int", "6", "gen: number of topics K"),
    ("segments_per_video", "int", "4", "gen: segments per video (<= n_topics)"),
    ("frames_per_segment", "int", "8", "gen: frames per segment"),
    ("d_raw", "int", "16", "gen: frame feature width (>= n_topics + 2)"),
    ("rho", "float", "0.6", "gen: fraction of comments whose opinion needs the video"),
    ("noise_sigma", "float", "0.1", "gen: Gaussian frame noise"),
    ("whole_video_fraction", "float", "0.2", "gen: share of video-dependent comments about the whole video"),
    ("modifier_probability", "float", "0.1", "gen: probability of each emotion modifier word"),
    ("model", "str", "vccsa", "train: vccsa | text_only"),
    ("preset", "str", "desk", "model size preset: desk | paper | tiny; the keys below override it"),
    ("scales", "int", "preset", "number of temporal convolution scales"),
    ("consensus_layers", "int", "preset", "transformer layers per scale in the consensus encoder"),
    ("consensus_tokens", "int", "preset", "consensus tokens per scale"),
    ("heads", "int", "preset", "attention heads"),
    ("d_video", "int", "preset", "video feature width"),
    ("d_text", "int", "preset", "text feature width"),
    ("d_consensus", "int", "preset", "consensus transformer width"),
    ("ffn_multiplier", "int", "preset", "feed-forward width as a multiple of the layer width"),
    ("memory_hidden", "int", "preset", "hidden size of the grounding recurrence"),
    ("memory_bidirectional", "bool", "preset", "run the grounding recurrence in both directions"),
    ("memory_shared", "bool", "preset", "share one grounding recurrence across scales"),
    ("ablation", "str", "full", "full | only_single_layer | only_last_layer | last_token_query | raw_attention_weight"),
    ("epochs", "int", "20", "training epochs"),
    ("batch_size", "int", "32", "mini-batch size"),
    ("learning_rate", "float", "preset", "Adam step size; 0.0005 for desk and tiny, 0.00001 for paper"),
    ("beta1", "float", "0.9", "Adam first-moment decay"),
    ("beta2", "float", "0.999", "Adam second-moment decay"),
    ("epsilon", "float", "1e-8", "Adam denominator guard"),
    ("weight_decay", "float", "0.0", "decoupled weight decay"),
    ("clip_norm", "float", "5.0", "global gradient-norm clip; 0 disables"),
    ("patience", "int", "0", "stop after this many epochs without dev improvement; 0 disables"),
    ("seeds", "int list", "[0, 1, 2, 3, 4]", "seeds for sweep and ablate"),
    ("v_cap", "int", "200", "frame cap per video"),
    ("t_cap", "int", "64", "token cap per comment"),
];

/// Step size of the full-width preset when `learning_rate` is not set.
pub const PAPER_LEARNING_RATE: f64 = 1e-5;

pub fn keys_help() -> String {
    let mut out = String::from("Config keys (TOML file via --config, or --set key=value):\n");
    for (key, ty, default, doc) in KEYS {
        out.push_str(&format!("  {key:<22} {ty:<9} [{default}] {doc}\n"));
    }
    out.push_str("\nExit codes: 0 ok, 2 usage/config error, 3 data error, 4 numeric failure.\n");
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data_dir: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub split_seed: u64,
    pub granularity: String,
    pub text_features: Option<PathBuf>,
    pub seed: u64,
    pub n_videos: usize,
    pub comments_per_video: usize,
    pub n_topics: usize,
    pub segments_per_video: usize,
    pub frames_per_segment: usize,
    pub d_raw: usize,
    pub rho: f64,
    pub noise_sigma: f64,
    pub whole_video_fraction: f64,
    pub modifier_probability: f64,
    pub model: String,
    pub preset: String,
    pub scales: Option<usize>,
    pub consensus_layers: Option<usize>,
    pub consensus_tokens: Option<usize>,
    pub heads: Option<usize>,
    pub d_video: Option<usize>,
    pub d_text: Option<usize>,
    pub d_consensus: Option<usize>,
    pub ffn_multiplier: Option<usize>,
    pub memory_hidden: Option<usize>,
    pub memory_bidirectional: Option<bool>,
    pub memory_shared: Option<bool>,
    pub ablation: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub v_cap: usize,
    pub t_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        let t = TrainConfig::default();
        Self {
            data_dir: None,
            split_file: None,
            split_seed: 0,
            granularity: "comment".into(),
            text_features: None,
            seed: 0,
            n_videos: g.n_videos,
            comments_per_video: g.comments_per_video,
            n_topics: g.n_topics,
            segments_per_video: g.segments_per_video,
            frames_per_segment: g.frames_per_segment,
            d_raw: g.d_raw,
            rho: g.rho,
            noise_sigma: g.noise_sigma,
            whole_video_fraction: g.whole_video_fraction,
            modifier_probability: g.modifier_probability,
            model: "vccsa".into(),
            preset: "desk".into(),
            scales: None,
            consensus_layers: None,
            consensus_tokens: None,
            heads: None,
            d_video: None,
            d_text: None,
            d_consensus: None,
            ffn_multiplier: None,
            memory_hidden: None,
            memory_bidirectional: None,
            memory_shared: None,
            ablation: Ablation::Full.key().into(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: None,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            weight_decay: t.weight_decay,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            patience: t.patience.unwrap_or(0),
            seeds: t.seeds,
            v_cap: t.v_cap,
            t_cap: t.t_cap,
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value), CliError> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {raw:?}")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl RunConfig {
    /// Reads `path` (if any), applies overrides in order and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            table.insert(key, value);
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.generator().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.model_kind()?;
        self.granularity()?;
        self.model_config(self.d_raw)?
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            n_videos: self.n_videos,
            comments_per_video: self.comments_per_video,
            n_topics: self.n_topics,
            segments_per_video: self.segments_per_video,
            frames_per_segment: self.frames_per_segment,
            d_raw: self.d_raw,
            rho: self.rho,
            noise_sigma: self.noise_sigma,
            whole_video_fraction: self.whole_video_fraction,
            modifier_probability: self.modifier_probability,
            seed: self.seed,
        }
    }

    pub fn model_kind(&self) -> Result<ModelKind, CliError> {
        match self.model.as_str() {
            "vccsa" => Ok(ModelKind::VcCsa),
            "text_only" => Ok(ModelKind::TextOnly),
            other => Err(CliError::Usage(format!("model must be vccsa or text_only, got {other:?}"))),
        }
    }

    pub fn granularity(&self) -> Result<Granularity, CliError> {
        self.granularity.parse().map_err(CliError::Usage)
    }

    /// Model config for `d_raw`-wide frames; the text encoder is completed from the data later.
    pub fn model_config(&self, d_raw: usize) -> Result<ModelConfig, CliError> {
        let placeholder = 2;
        let mut c = match self.preset.as_str() {
            "desk" => ModelConfig::desk(d_raw, placeholder),
            "paper" => ModelConfig::paper(d_raw, TextEncoder::Embedding { vocab_size: placeholder }),
            "tiny" => ModelConfig::tiny(d_raw, placeholder),
            other => return Err(CliError::Usage(format!("preset must be desk, paper or tiny, got {other:?}"))),
        };
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = self.$field { c.$field = v; } )* };
        }
        set!(
            scales,
            consensus_layers,
            consensus_tokens,
            heads,
            d_video,
            d_text,
            d_consensus,
            ffn_multiplier,
            memory_hidden,
            memory_bidirectional,
            memory_shared
        );
        c.ablation = self.ablation.parse().map_err(CliError::Usage)?;
        Ok(c)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate.unwrap_or(if self.preset == "paper" {
                PAPER_LEARNING_RATE
            } else {
                TrainConfig::default().learning_rate
            }),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            patience: (self.patience > 0).then_some(self.patience),
            seeds: self.seeds.clone(),
            v_cap: self.v_cap,
            t_cap: self.t_cap,
            checkpoint: None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
