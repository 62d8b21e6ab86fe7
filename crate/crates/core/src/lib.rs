//! Comment sentiment analysis grounded in micro-video content.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: CSMV-format corpora (feature files, comment records, splits, batches, QA).
//! * [`synthgen`]: synthetic corpora whose text-only accuracy ceiling is known in closed form.
//! * [`encoders`]: tokenizer, vocabulary, text embedding and video projection.
//! * [`tape`]: the small reverse-mode autodiff engine every model runs on.
//! * [`model`]: the video-context model (multi-scale convolution, consensus
//!   transformer, recurrent grounding, multi-view fusion) and the text-only baseline.
//! * [`trainer`]: optimisation loop, metrics, seed sweeps and ablations.

pub mod data;
pub mod encoders;
pub mod model;
pub mod synthgen;
pub mod tape;
pub mod trainer;

pub use data::{CommentRecord, Emotion, Opinion, PaddedBatch, VideoFeatures};
pub use model::{Ablation, ModelConfig, TextOnlyModel, VcCsa};
pub use trainer::{MetricsReport, TrainConfig};
