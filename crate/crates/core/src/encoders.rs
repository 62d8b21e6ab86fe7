//! Text and video encoders.
//!
//! Text is tokenized into words, mapped through a training-split vocabulary and
//! embedded with a trainable table plus fixed sinusoidal positions. A loader
//! for precomputed text features bypasses both steps. Raw frame features are
//! mapped to the model width with a per-frame affine projection.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::Array2;
use rand::Rng;
use thiserror::Error;

use crate::data::{read_matrix, DataError};
use crate::model::layers::Linear;
use crate::tape::{Graph, Matrix, ParamId, ParamStore, Var};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("text has no tokens")]
    EmptyText,
    #[error("token id {id} out of range for vocabulary of {size}")]
    IdOutOfRange { id: usize, size: usize },
    #[error("expected feature width {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("vocabulary file line {line}: {message}")]
    BadVocabulary { line: usize, message: String },
}

/// Lowercases and splits on whitespace and punctuation. Word characters are
/// alphanumerics and `_`; everything else is a boundary and is dropped.
pub fn tokenize(text: &str) -> Result<Vec<String>, EncoderError> {
    let tokens: Vec<String> = text
        .split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(EncoderError::EmptyText);
    }
    Ok(tokens)
}

/// Token to id map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let ids = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tokens, ids }
    }
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    fn push(&mut self, token: &str) {
        if !self.ids.contains_key(token) {
            self.ids.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>, EncoderError> {
        Ok(tokenize(text)?.iter().map(|t| self.id(t)).collect())
    }

    /// One `token<TAB>id` line per entry, reserved ids included.
    pub fn to_file_string(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn parse_file_string(content: &str) -> Result<Self, EncoderError> {
        let mut tokens = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |message: &str| EncoderError::BadVocabulary {
                line: i + 1,
                message: message.to_string(),
            };
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| bad("expected token<TAB>id"))?;
            let id: usize = id.parse().map_err(|_| bad("id is not an integer"))?;
            if id != tokens.len() {
                return Err(bad("ids must be dense and ascending"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < 2 || tokens[PAD_ID] != PAD_TOKEN || tokens[UNK_ID] != UNK_TOKEN {
            return Err(EncoderError::BadVocabulary {
                line: 1,
                message: "reserved <pad>/<unk> entries missing".into(),
            });
        }
        let ids: HashMap<String, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if ids.len() != tokens.len() {
            return Err(EncoderError::BadVocabulary {
                line: 0,
                message: "duplicate token".into(),
            });
        }
        Ok(Self { tokens, ids })
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        fs::write(path, self.to_file_string())
    }

    pub fn read(path: &Path) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        Ok(Self::parse_file_string(&fs::read_to_string(path)?)?)
    }
}

/// Builds a vocabulary in first-occurrence order. Only pass training-split texts.
pub fn build_vocabulary<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Vocabulary, EncoderError> {
    let mut vocab = Vocabulary::default();
    for text in texts {
        for t in tokenize(text)? {
            vocab.push(&t);
        }
    }
    Ok(vocab)
}

/// Fixed sinusoidal positional encoding, `len x dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    Matrix::from_shape_fn((len, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Trainable token table plus sinusoidal positions.
#[derive(Debug, Clone)]
pub struct TextEmbedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl TextEmbedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = Matrix::from_shape_fn((vocab_size, dim), |_| rng.random_range(-1.0..1.0));
        Self {
            table: store.insert(format!("{name}.table"), table),
            vocab_size,
            dim,
        }
    }

    /// `ids.len() x dim`. PAD rows are produced like any other id.
    pub fn forward(&self, g: &mut Graph, ids: &[usize]) -> Result<Var, EncoderError> {
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(EncoderError::IdOutOfRange {
                id,
                size: self.vocab_size,
            });
        }
        let table = g.param(self.table);
        let rows = g.gather(table, ids);
        let pos = g.input(sinusoidal_positions(ids.len(), self.dim));
        Ok(g.add(rows, pos))
    }
}

/// Per-frame affine map `d_raw -> d_v`, shared over time.
#[derive(Debug, Clone)]
pub struct VideoProjection {
    pub linear: Linear,
}

impl VideoProjection {
    pub fn new(store: &mut ParamStore, name: &str, d_raw: usize, d_v: usize, rng: &mut impl Rng) -> Self {
        Self {
            linear: Linear::new(store, name, d_raw, d_v, true, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, frames: Var) -> Result<Var, EncoderError> {
        let (_, cols) = g.shape(frames);
        if cols != self.linear.in_dim {
            return Err(EncoderError::DimMismatch {
                expected: self.linear.in_dim,
                actual: cols,
            });
        }
        Ok(self.linear.forward(g, frames))
    }
}

/// Precomputed text features stored in the frame-feature binary layout, one
/// file per comment, located through a `comment_id -> relative path` JSON index.
#[derive(Debug, Clone)]
pub struct ExternalTextFeatures {
    root: PathBuf,
    index: IndexMap<String, PathBuf>,
}

impl ExternalTextFeatures {
    pub fn new(root: impl Into<PathBuf>, index: IndexMap<String, PathBuf>) -> Self {
        Self {
            root: root.into(),
            index,
        }
    }

    /// Reads the JSON index; feature paths resolve relative to its directory.
    pub fn open(index_path: &Path) -> Result<Self, DataError> {
        let raw = fs::read_to_string(index_path).map_err(|e| DataError::Io {
            path: index_path.display().to_string(),
            source: e,
        })?;
        let index = serde_json::from_str(&raw).map_err(|e| DataError::Format {
            path: index_path.display().to_string(),
            message: e.to_string(),
        })?;
        let root = index_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, index })
    }

    pub fn load(&self, comment_id: &str) -> Result<Array2<f32>, DataError> {
        let rel = self.index.get(comment_id).ok_or_else(|| DataError::MissingComment {
            comment_id: comment_id.to_string(),
        })?;
        read_matrix(&self.root.join(rel))
    }

    /// Width of the first stored matrix.
    pub fn dim(&self) -> Result<usize, DataError> {
        let first = self.index.keys().next().ok_or(DataError::EmptyCorpus)?;
        Ok(self.load(first)?.ncols())
    }
}
