//! Padded mini-batches.

use std::collections::HashMap;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{CommentRecord, Corpus, DataError, Label, Part, SplitAssignment};
use crate::encoders::{EncoderError, ExternalTextFeatures, Vocabulary, PAD_ID};

/// Where a comment's text features come from.
#[derive(Clone, Copy)]
pub enum TextSource<'a> {
    /// Tokenize and look up ids; the model embeds them.
    Tokens(&'a Vocabulary),
    /// Precomputed `l_t x d_t` matrices keyed by comment id.
    External(&'a ExternalTextFeatures),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub v_cap: usize,
    pub t_cap: usize,
    pub shuffle_seed: Option<u64>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            v_cap: 200,
            t_cap: 64,
            shuffle_seed: None,
        }
    }
}

/// Number of inputs that were cut to the caps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TruncationReport {
    pub videos_truncated: usize,
    pub comments_truncated: usize,
}

/// Aligned, masked rows of (video, comment, labels). Masks are prefix masks:
/// row `b` has `video_len(b)` real frames followed by zero padding, and
/// likewise for tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub comment_ids: Vec<String>,
    pub video_ids: Vec<String>,
    /// `B x V_max x d_raw`, zero at padded frames.
    pub video: Array3<f64>,
    pub video_mask: Array2<bool>,
    /// `B x T_max`, [`PAD_ID`] at padded positions.
    pub tokens: Array2<usize>,
    pub token_mask: Array2<bool>,
    /// `B x T_max x d_t` when text features are precomputed.
    pub text_features: Option<Array3<f64>>,
    pub opinion_labels: Vec<usize>,
    pub emotion_labels: Vec<usize>,
}

impl PaddedBatch {
    pub fn len(&self) -> usize {
        self.comment_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comment_ids.is_empty()
    }

    pub fn video_len(&self, row: usize) -> usize {
        self.video_mask.row(row).iter().filter(|&&m| m).count()
    }

    pub fn text_len(&self, row: usize) -> usize {
        self.token_mask.row(row).iter().filter(|&&m| m).count()
    }

    pub fn max_video_len(&self) -> usize {
        self.video_mask.ncols()
    }

    pub fn max_text_len(&self) -> usize {
        self.token_mask.ncols()
    }

    /// Appends `extra_frames` padded frames and `extra_tokens` padded tokens to every row.
    pub fn with_extra_padding(&self, extra_frames: usize, extra_tokens: usize) -> PaddedBatch {
        let (b, v, d) = self.video.dim();
        let t = self.tokens.ncols();
        let mut out = self.clone();
        out.video = Array3::zeros((b, v + extra_frames, d));
        out.video.slice_mut(s![.., ..v, ..]).assign(&self.video);
        out.video_mask = Array2::from_elem((b, v + extra_frames), false);
        out.video_mask.slice_mut(s![.., ..v]).assign(&self.video_mask);
        out.tokens = Array2::from_elem((b, t + extra_tokens), PAD_ID);
        out.tokens.slice_mut(s![.., ..t]).assign(&self.tokens);
        out.token_mask = Array2::from_elem((b, t + extra_tokens), false);
        out.token_mask.slice_mut(s![.., ..t]).assign(&self.token_mask);
        if let Some(tf) = &self.text_features {
            let dt = tf.dim().2;
            let mut grown = Array3::zeros((b, t + extra_tokens, dt));
            grown.slice_mut(s![.., ..t, ..]).assign(tf);
            out.text_features = Some(grown);
        }
        out
    }
}

enum EncodedText {
    Ids(Vec<usize>),
    Features(Array2<f32>),
}

impl EncodedText {
    fn len(&self) -> usize {
        match self {
            EncodedText::Ids(ids) => ids.len(),
            EncodedText::Features(m) => m.nrows(),
        }
    }
}

fn encode(record: &CommentRecord, text: TextSource<'_>) -> Result<EncodedText, DataError> {
    match text {
        TextSource::Tokens(vocab) => vocab
            .encode(&record.text)
            .map(EncodedText::Ids)
            .map_err(|e| match e {
                EncoderError::EmptyText => DataError::EmptyText {
                    comment_id: record.comment_id.clone(),
                },
                other => DataError::Format {
                    path: record.comment_id.clone(),
                    message: other.to_string(),
                },
            }),
        TextSource::External(ext) => ext.load(&record.comment_id).map(EncodedText::Features),
    }
}

/// Builds one padded batch from explicit records.
pub fn batch_from_records(
    records: &[&CommentRecord],
    corpus: &Corpus,
    text: TextSource<'_>,
    v_cap: usize,
    t_cap: usize,
    report: &mut TruncationReport,
) -> Result<PaddedBatch, DataError> {
    assert!(v_cap >= 1 && t_cap >= 1, "caps must be positive");
    let d_raw = corpus.feature_dim();
    let mut videos = Vec::with_capacity(records.len());
    let mut texts = Vec::with_capacity(records.len());
    for r in records {
        let video = corpus.video(&r.video_id).ok_or_else(|| DataError::DanglingVideo {
            comment_id: r.comment_id.clone(),
            video_id: r.video_id.clone(),
        })?;
        if video.len() > v_cap {
            report.videos_truncated += 1;
        }
        let enc = encode(r, text)?;
        if enc.len() > t_cap {
            report.comments_truncated += 1;
        }
        videos.push(video);
        texts.push(enc);
    }
    let b = records.len();
    let v_max = videos.iter().map(|v| v.len().min(v_cap)).max().unwrap_or(1);
    let t_max = texts.iter().map(|t| t.len().min(t_cap)).max().unwrap_or(1);
    let mut video = Array3::zeros((b, v_max, d_raw));
    let mut video_mask = Array2::from_elem((b, v_max), false);
    let mut tokens = Array2::from_elem((b, t_max), PAD_ID);
    let mut token_mask = Array2::from_elem((b, t_max), false);
    let mut text_features: Option<Array3<f64>> = None;
    for (row, (v, t)) in videos.iter().zip(&texts).enumerate() {
        let vl = v.len().min(v_cap);
        video
            .slice_mut(s![row, ..vl, ..])
            .assign(&v.frames.slice(s![..vl, ..]).mapv(f64::from));
        video_mask.slice_mut(s![row, ..vl]).fill(true);
        let tl = t.len().min(t_cap);
        token_mask.slice_mut(s![row, ..tl]).fill(true);
        match t {
            EncodedText::Ids(ids) => {
                for (j, &id) in ids.iter().take(tl).enumerate() {
                    tokens[[row, j]] = id;
                }
            }
            EncodedText::Features(m) => {
                let tf = text_features.get_or_insert_with(|| Array3::zeros((b, t_max, m.ncols())));
                tf.slice_mut(s![row, ..tl, ..])
                    .assign(&m.slice(s![..tl, ..]).mapv(f64::from));
            }
        }
    }
    Ok(PaddedBatch {
        comment_ids: records.iter().map(|r| r.comment_id.clone()).collect(),
        video_ids: records.iter().map(|r| r.video_id.clone()).collect(),
        video,
        video_mask,
        tokens,
        token_mask,
        text_features,
        opinion_labels: records.iter().map(|r| r.opinion.index()).collect(),
        emotion_labels: records.iter().map(|r| r.emotion.index()).collect(),
    })
}

/// Partitions one split part into padded batches. Order follows the corpus
/// unless `shuffle_seed` is set, in which case it is a deterministic shuffle.
pub fn make_batches(
    split: &SplitAssignment,
    part: Part,
    corpus: &Corpus,
    text: TextSource<'_>,
    opts: &BatchOptions,
) -> Result<(Vec<PaddedBatch>, TruncationReport), DataError> {
    assert!(opts.batch_size >= 1, "batch_size must be positive");
    let by_id: HashMap<&str, &CommentRecord> = corpus
        .comments()
        .iter()
        .map(|c| (c.comment_id.as_str(), c))
        .collect();
    let mut members = split
        .members(part)
        .into_iter()
        .map(|id| {
            by_id.get(id).copied().ok_or_else(|| {
                DataError::SplitMismatch(format!("comment {id} is not in the corpus"))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = opts.shuffle_seed {
        members.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut report = TruncationReport::default();
    let batches = members
        .chunks(opts.batch_size)
        .map(|chunk| batch_from_records(chunk, corpus, text, opts.v_cap, opts.t_cap, &mut report))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((batches, report))
}
