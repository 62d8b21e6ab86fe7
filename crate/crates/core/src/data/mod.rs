//! CSMV-format corpora: feature files, comment records, splits, padded batches
//! and the dataset QA checks.
//!
//! A corpus directory looks like
//!
//! ```text
//! <root>/index.json        video_id -> relative feature path
//! <root>/comments.jsonl    one CommentRecord per line
//! <root>/features/*.csmv   one feature file per video
//! ```

mod batch;
mod comments;
mod features;
mod qa;
mod split;

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use thiserror::Error;

pub use batch::{batch_from_records, make_batches, BatchOptions, PaddedBatch, TextSource, TruncationReport};
pub use comments::{
    format_comments, parse_comment_line, parse_comments, read_comments, write_comments, CommentRecord,
    Emotion, Label, Opinion,
};
pub use features::{
    decode_matrix, encode_matrix, read_matrix, read_video_features, write_matrix, write_video_features,
    VideoFeatures, MAGIC, VERSION,
};
pub use qa::{consistency_check, label_distribution, ConsistencyResult, LabelDistribution, CONSISTENCY_THRESHOLD};
pub use split::{split_corpus, split_sizes, Granularity, Part, SplitAssignment};

pub const INDEX_FILE: &str = "index.json";
pub const COMMENTS_FILE: &str = "comments.jsonl";
pub const FEATURES_DIR: &str = "features";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a CSMV feature file (bad magic)")]
    BadMagic { path: String },
    #[error("{path}: unsupported feature file version {version}")]
    UnsupportedVersion { path: String, version: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    Truncated {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {actual} bytes, header declares {expected}")]
    TrailingBytes {
        path: String,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: zero-sized feature matrix")]
    EmptyMatrix { path: String },
    #[error("{path}: non-finite value in payload")]
    NonFinite { path: String },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: unknown {field} label {value:?}")]
    UnknownLabel {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: missing field {field}")]
    MissingField { line: usize, field: &'static str },
    #[error("duplicate id {id}")]
    DuplicateId { id: String },
    #[error("comment {comment_id}: empty text")]
    EmptyText { comment_id: String },
    #[error("comment {comment_id}: video {video_id} is not in the corpus index")]
    DanglingVideo { comment_id: String, video_id: String },
    #[error("video {video_id}: feature dimension {actual}, corpus uses {expected}")]
    DimMismatch {
        video_id: String,
        expected: usize,
        actual: usize,
    },
    #[error("comment {comment_id} not found")]
    MissingComment { comment_id: String },
    #[error("split does not match corpus: {0}")]
    SplitMismatch(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl DataError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

/// Video locators plus the ordered comment list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusIndex {
    pub videos: IndexMap<String, PathBuf>,
    pub comments: Vec<CommentRecord>,
}

impl CorpusIndex {
    /// Checks id uniqueness and that every comment resolves to a video.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for c in &self.comments {
            if !seen.insert(c.comment_id.as_str()) {
                return Err(DataError::DuplicateId {
                    id: c.comment_id.clone(),
                });
            }
            if !self.videos.contains_key(&c.video_id) {
                return Err(DataError::DanglingVideo {
                    comment_id: c.comment_id.clone(),
                    video_id: c.video_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn comment(&self, comment_id: &str) -> Option<&CommentRecord> {
        self.comments.iter().find(|c| c.comment_id == comment_id)
    }

    pub fn read(root: &Path) -> Result<Self, DataError> {
        let index_path = root.join(INDEX_FILE);
        let raw = fs::read_to_string(&index_path).map_err(|e| DataError::io(&index_path, e))?;
        let videos: IndexMap<String, PathBuf> =
            serde_json::from_str(&raw).map_err(|e| DataError::Format {
                path: index_path.display().to_string(),
                message: e.to_string(),
            })?;
        let comments = read_comments(&root.join(COMMENTS_FILE))?;
        Ok(Self { videos, comments })
    }

    pub fn write(&self, root: &Path) -> Result<(), DataError> {
        fs::create_dir_all(root).map_err(|e| DataError::io(root, e))?;
        let index_path = root.join(INDEX_FILE);
        let json = serde_json::to_string_pretty(&self.videos).expect("index serializes");
        fs::write(&index_path, json + "\n").map_err(|e| DataError::io(&index_path, e))?;
        write_comments(&root.join(COMMENTS_FILE), &self.comments)
    }
}

/// An index together with every video's features, loaded and validated.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub index: CorpusIndex,
    pub features: IndexMap<String, VideoFeatures>,
}

impl Corpus {
    /// Builds an in-memory corpus; feature locators are synthesized from ids.
    pub fn from_parts(videos: Vec<VideoFeatures>, comments: Vec<CommentRecord>) -> Result<Self, DataError> {
        let index = CorpusIndex {
            videos: videos
                .iter()
                .map(|v| (v.video_id.clone(), feature_path(&v.video_id)))
                .collect(),
            comments,
        };
        let features = videos.into_iter().map(|v| (v.video_id.clone(), v)).collect();
        let corpus = Self { index, features };
        corpus.validate()?;
        Ok(corpus)
    }

    /// Reads and validates a corpus directory. The first integrity violation is returned.
    pub fn load(root: &Path) -> Result<Self, DataError> {
        let index = CorpusIndex::read(root)?;
        index.validate()?;
        let mut features = IndexMap::with_capacity(index.videos.len());
        for (video_id, rel) in &index.videos {
            let f = read_video_features(&root.join(rel), video_id)?;
            features.insert(video_id.clone(), f);
        }
        let corpus = Self { index, features };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn write(&self, root: &Path) -> Result<(), DataError> {
        self.index.write(root)?;
        for (video_id, rel) in &self.index.videos {
            write_video_features(&root.join(rel), &self.features[video_id])?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), DataError> {
        self.index.validate()?;
        let mut dim = None;
        for video_id in self.index.videos.keys() {
            let f = self.features.get(video_id).ok_or_else(|| DataError::Format {
                path: video_id.clone(),
                message: "no features loaded".into(),
            })?;
            let d = f.dim();
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(DataError::DimMismatch {
                        video_id: video_id.clone(),
                        expected,
                        actual: d,
                    })
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn comments(&self) -> &[CommentRecord] {
        &self.index.comments
    }

    /// Raw feature width shared by all videos; 0 for an empty corpus.
    pub fn feature_dim(&self) -> usize {
        self.features.values().next().map_or(0, VideoFeatures::dim)
    }

    pub fn video(&self, video_id: &str) -> Option<&VideoFeatures> {
        self.features.get(video_id)
    }
}

/// Conventional relative location of a video's feature file.
pub fn feature_path(video_id: &str) -> PathBuf {
    PathBuf::from(FEATURES_DIR).join(format!("{video_id}.csmv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn record(id: &str, video: &str) -> CommentRecord {
        CommentRecord {
            comment_id: id.into(),
            video_id: video.into(),
            text: "hello there".into(),
            opinion: Opinion::Neutral,
            emotion: Emotion::Surprise,
        }
    }

    #[test]
    fn dangling_video_is_named() {
        let v = VideoFeatures::new("v1", Array2::zeros((2, 3)));
        let err = Corpus::from_parts(vec![v], vec![record("c1", "v1"), record("c2", "v9")]).unwrap_err();
        match err {
            DataError::DanglingVideo { comment_id, video_id } => {
                assert_eq!((comment_id.as_str(), video_id.as_str()), ("c2", "v9"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn mixed_feature_widths_are_rejected() {
        let a = VideoFeatures::new("a", Array2::zeros((2, 3)));
        let b = VideoFeatures::new("b", Array2::zeros((2, 4)));
        assert!(matches!(
            Corpus::from_parts(vec![a, b], vec![]),
            Err(DataError::DimMismatch { .. })
        ));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = VideoFeatures::new("v1", Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f32));
        let corpus = Corpus::from_parts(vec![v.clone()], vec![record("c1", "v1")]).unwrap();
        corpus.write(dir.path()).unwrap();
        let back = Corpus::load(dir.path()).unwrap();
        assert_eq!(back.index, corpus.index);
        assert_eq!(back.video("v1").unwrap(), &v);
    }
}
