//! Synthetic corpora with a known text-only ceiling.
//!
//! Every video is a sequence of segments, each showing one topic with a
//! polarity and an intensity. A fraction `rho` of comments say only whether
//! they agree (`same`) or disagree (`opposite`) with a segment (or with the
//! whole video), so their opinion is a coin flip from the text alone and
//! fully determined once the referenced segment's polarity is read from the
//! frames. All other comments carry no marker and are neutral.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CommentRecord, Corpus, DataError, Emotion, Label, Opinion, VideoFeatures};

pub const SCRIPT_FILE: &str = "script.json";
pub const INTENSITY_LOW: f64 = 0.3;
pub const INTENSITY_HIGH: f64 = 1.0;
pub const FILLER_VOCAB: usize = 50;
pub const MIN_COMMENT_TOKENS: usize = 4;
pub const MAX_COMMENT_TOKENS: usize = 12;
pub const WHOLE_WORD: &str = "overall";
pub const SAME_WORD: &str = "same";
pub const OPPOSITE_WORD: &str = "opposite";
pub const FEAR_WORD: &str = "scary";
pub const SAD_WORD: &str = "sad";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("comment {comment_id}: referent {referent:?} does not exist in video {video_id}")]
    DanglingReferent {
        comment_id: String,
        video_id: String,
        referent: Referent,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Script { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_videos: usize,
    pub comments_per_video: usize,
    /// Number of topics `K`.
    pub n_topics: usize,
    pub segments_per_video: usize,
    pub frames_per_segment: usize,
    /// Frame width; the first `K + 2` coordinates carry topic, polarity and intensity.
    pub d_raw: usize,
    /// Fraction of comments whose opinion depends on the video.
    pub rho: f64,
    pub noise_sigma: f64,
    /// Fraction of video-dependent comments that refer to the whole video.
    pub whole_video_fraction: f64,
    /// Probability of each emotion modifier word.
    pub modifier_probability: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_videos: 500,
            comments_per_video: 8,
            n_topics: 6,
            segments_per_video: 4,
            frames_per_segment: 8,
            d_raw: 16,
            rho: 0.6,
            noise_sigma: 0.1,
            whole_video_fraction: 0.2,
            modifier_probability: 0.1,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        for (name, v) in [
            ("n_videos", self.n_videos),
            ("comments_per_video", self.comments_per_video),
            ("n_topics", self.n_topics),
            ("segments_per_video", self.segments_per_video),
            ("frames_per_segment", self.frames_per_segment),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.d_raw < self.n_topics + 2 {
            return bad(format!(
                "d_raw={} must be at least n_topics + 2 = {}",
                self.d_raw,
                self.n_topics + 2
            ));
        }
        if self.segments_per_video > self.n_topics {
            return bad(format!(
                "segments_per_video={} exceeds n_topics={}; segment topics are distinct",
                self.segments_per_video, self.n_topics
            ));
        }
        for (name, p) in [
            ("rho", self.rho),
            ("whole_video_fraction", self.whole_video_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name}={p} must lie in [0, 1]"));
            }
        }
        if !(0.0..=0.5).contains(&self.modifier_probability) {
            return bad(format!(
                "modifier_probability={} must lie in [0, 0.5]",
                self.modifier_probability
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma={} must be finite and nonnegative", self.noise_sigma));
        }
        Ok(())
    }

    pub fn frames_per_video(&self) -> usize {
        self.segments_per_video * self.frames_per_segment
    }

    /// Frame index range of segment `s`.
    pub fn segment_frames(&self, s: usize) -> std::ops::Range<usize> {
        s * self.frames_per_segment..(s + 1) * self.frames_per_segment
    }

    /// Number of comments the corpus will hold.
    pub fn n_comments(&self) -> usize {
        self.n_videos * self.comments_per_video
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Low,
    High,
}

impl Intensity {
    pub fn value(self) -> f64 {
        match self {
            Intensity::Low => INTENSITY_LOW,
            Intensity::High => INTENSITY_HIGH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    /// Topic in `1..=K`.
    pub topic: usize,
    /// `+1` or `-1`.
    pub polarity: i8,
    pub intensity: Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Referent {
    Segment(usize),
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Marker {
    Same,
    Opposite,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modifier {
    None,
    Fear,
    Sad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScript {
    pub video_id: String,
    pub segments: Vec<Segment>,
}

impl VideoScript {
    /// Sign of the summed segment polarities; generation guarantees it is nonzero.
    pub fn whole_polarity(&self) -> i8 {
        let sum: i32 = self.segments.iter().map(|s| s.polarity as i32).sum();
        if sum >= 0 {
            1
        } else {
            -1
        }
    }

    /// High when strictly more segments are high than low.
    pub fn whole_intensity(&self) -> Intensity {
        let high = self
            .segments
            .iter()
            .filter(|s| s.intensity == Intensity::High)
            .count();
        if 2 * high > self.segments.len() {
            Intensity::High
        } else {
            Intensity::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentScript {
    pub comment_id: String,
    pub video_id: String,
    pub referent: Referent,
    pub marker: Marker,
    pub modifier: Modifier,
    /// Whether the text names the referenced segment's topic.
    pub topic_word: bool,
}

/// All latent variables behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentScript {
    pub config: GeneratorConfig,
    pub videos: Vec<VideoScript>,
    pub comments: Vec<CommentScript>,
}

impl LatentScript {
    pub fn video(&self, video_id: &str) -> Option<&VideoScript> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        let json = serde_json::to_string_pretty(self).expect("script serializes");
        fs::write(path, json + "\n").map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| SynthError::Script {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

pub fn topic_word(topic: usize) -> String {
    format!("topic_{topic}")
}

pub fn filler_word(i: usize) -> String {
    format!("w{i:02}")
}

/// True for the content-free filler tokens.
pub fn is_filler(token: &str) -> bool {
    token.len() == 3 && token.starts_with('w') && token[1..].bytes().all(|b| b.is_ascii_digit())
}

/// Text-only accuracy no classifier can beat: markerless comments are always
/// neutral, marked ones are a fair coin between positive and negative.
pub fn bayes_ceiling(config: &GeneratorConfig) -> f64 {
    (1.0 - config.rho) + 0.5 * config.rho
}

/// Labels implied by the latent variables.
pub fn oracle_label(video: &VideoScript, comment: &CommentScript) -> Result<(Opinion, Emotion), SynthError> {
    let (polarity, intensity) = match comment.referent {
        Referent::Segment(s) => {
            let seg = video.segments.get(s).ok_or_else(|| SynthError::DanglingReferent {
                comment_id: comment.comment_id.clone(),
                video_id: video.video_id.clone(),
                referent: comment.referent,
            })?;
            (seg.polarity, seg.intensity)
        }
        Referent::Whole => (video.whole_polarity(), video.whole_intensity()),
    };
    let opinion = match (comment.marker, polarity > 0) {
        (Marker::None, _) => Opinion::Neutral,
        (Marker::Same, true) | (Marker::Opposite, false) => Opinion::Positive,
        (Marker::Same, false) | (Marker::Opposite, true) => Opinion::Negative,
    };
    let base = match (opinion, intensity) {
        (Opinion::Positive, Intensity::High) => Emotion::Joy,
        (Opinion::Positive, Intensity::Low) => Emotion::Trust,
        (Opinion::Negative, Intensity::High) => Emotion::Anger,
        (Opinion::Negative, Intensity::Low) => Emotion::Disgust,
        (Opinion::Neutral, _) if comment.topic_word => Emotion::Anticipation,
        (Opinion::Neutral, _) => Emotion::Surprise,
    };
    let emotion = match comment.modifier {
        Modifier::None => base,
        Modifier::Fear => Emotion::Fear,
        Modifier::Sad => Emotion::Sadness,
    };
    Ok((opinion, emotion))
}

/// Re-derives every stored label from the script; returns the ids that disagree.
pub fn verify_labels(script: &LatentScript, comments: &[CommentRecord]) -> Result<Vec<String>, SynthError> {
    let videos: HashMap<&str, &VideoScript> = script.videos.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let latent: HashMap<&str, &CommentScript> =
        script.comments.iter().map(|c| (c.comment_id.as_str(), c)).collect();
    let mut wrong = Vec::new();
    for record in comments {
        let Some(c) = latent.get(record.comment_id.as_str()) else {
            wrong.push(record.comment_id.clone());
            continue;
        };
        let video = videos.get(c.video_id.as_str()).ok_or_else(|| SynthError::DanglingReferent {
            comment_id: c.comment_id.clone(),
            video_id: c.video_id.clone(),
            referent: c.referent,
        })?;
        if oracle_label(video, c)? != (record.opinion, record.emotion) || record.video_id != c.video_id {
            wrong.push(record.comment_id.clone());
        }
    }
    Ok(wrong)
}

/// A generated corpus together with its latent script.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub script: LatentScript,
}

impl SyntheticCorpus {
    /// Writes the corpus files plus the script file.
    pub fn write(&self, root: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(root).map_err(|e| DataError::Io {
            path: root.display().to_string(),
            source: e,
        })?;
        self.corpus.write(root)?;
        self.script.write(&root.join(SCRIPT_FILE))
    }
}

pub fn video_id(v: usize) -> String {
    format!("v{v:05}")
}

pub fn comment_id(v: usize, c: usize) -> String {
    format!("v{v:05}_c{c:02}")
}

/// Generates a corpus. Each video draws from its own stream of one seeded
/// generator, so any video can be regenerated independently of the others.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<SyntheticCorpus, SynthError> {
    config.validate()?;
    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let mut videos = Vec::with_capacity(config.n_videos);
    let mut video_scripts = Vec::with_capacity(config.n_videos);
    let mut records = Vec::with_capacity(config.n_comments());
    let mut comment_scripts = Vec::with_capacity(config.n_comments());
    let fillers: Vec<String> = (0..FILLER_VOCAB).map(filler_word).collect();
    for v in 0..config.n_videos {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(v as u64);
        let script = sample_video(config, &mut rng, video_id(v));
        let frames = render_frames(config, &script, &noise, &mut rng);
        for c in 0..config.comments_per_video {
            let latent = sample_comment(config, &script, &mut rng, comment_id(v, c));
            let text = render_text(&script, &latent, &fillers, &mut rng);
            let (opinion, emotion) = oracle_label(&script, &latent)?;
            records.push(CommentRecord {
                comment_id: latent.comment_id.clone(),
                video_id: script.video_id.clone(),
                text,
                opinion,
                emotion,
            });
            comment_scripts.push(latent);
        }
        videos.push(VideoFeatures::new(script.video_id.clone(), frames));
        video_scripts.push(script);
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::from_parts(videos, records)?,
        script: LatentScript {
            config: config.clone(),
            videos: video_scripts,
            comments: comment_scripts,
        },
    })
}

fn sample_video(config: &GeneratorConfig, rng: &mut ChaCha8Rng, video_id: String) -> VideoScript {
    let n = config.segments_per_video;
    // Resampling tied sign patterns keeps the whole-video polarity defined and,
    // by symmetry, uniform.
    let polarities = loop {
        let p: Vec<i8> = (0..n).map(|_| if rng.random_bool(0.5) { 1 } else { -1 }).collect();
        if p.iter().map(|&x| x as i32).sum::<i32>() != 0 {
            break p;
        }
    };
    let topics = sample(rng, config.n_topics, n).into_vec();
    let segments = topics
        .into_iter()
        .zip(polarities)
        .map(|(t, polarity)| Segment {
            topic: t + 1,
            polarity,
            intensity: if rng.random_bool(0.5) {
                Intensity::High
            } else {
                Intensity::Low
            },
        })
        .collect();
    VideoScript { video_id, segments }
}

fn render_frames(
    config: &GeneratorConfig,
    script: &VideoScript,
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
) -> Array2<f32> {
    let k = config.n_topics;
    let mut frames = Array2::zeros((config.frames_per_video(), config.d_raw));
    for (s, seg) in script.segments.iter().enumerate() {
        for f in config.segment_frames(s) {
            for d in 0..config.d_raw {
                let clean = if d == seg.topic - 1 {
                    1.0
                } else if d == k {
                    seg.polarity as f64
                } else if d == k + 1 {
                    seg.intensity.value()
                } else {
                    0.0
                };
                let eps = if config.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 };
                frames[[f, d]] = (clean + eps) as f32;
            }
        }
    }
    frames
}

fn sample_comment(
    config: &GeneratorConfig,
    video: &VideoScript,
    rng: &mut ChaCha8Rng,
    comment_id: String,
) -> CommentScript {
    let n_segments = video.segments.len();
    let (referent, marker, topic_word) = if rng.random_bool(config.rho) {
        let marker = if rng.random_bool(0.5) {
            Marker::Same
        } else {
            Marker::Opposite
        };
        if rng.random_bool(config.whole_video_fraction) {
            (Referent::Whole, marker, false)
        } else {
            (Referent::Segment(rng.random_range(0..n_segments)), marker, true)
        }
    } else if rng.random_bool(0.5) {
        (Referent::Segment(rng.random_range(0..n_segments)), Marker::None, true)
    } else {
        (Referent::Whole, Marker::None, false)
    };
    let u: f64 = rng.random();
    let modifier = if u < config.modifier_probability {
        Modifier::Fear
    } else if u < 2.0 * config.modifier_probability {
        Modifier::Sad
    } else {
        Modifier::None
    };
    CommentScript {
        comment_id,
        video_id: video.video_id.clone(),
        referent,
        marker,
        modifier,
        topic_word,
    }
}

fn render_text(video: &VideoScript, c: &CommentScript, fillers: &[String], rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<String> = Vec::with_capacity(MAX_COMMENT_TOKENS);
    match c.referent {
        Referent::Segment(s) if c.topic_word => words.push(topic_word(video.segments[s].topic)),
        Referent::Whole if c.marker != Marker::None => words.push(WHOLE_WORD.to_string()),
        _ => {}
    }
    match c.marker {
        Marker::Same => words.push(SAME_WORD.to_string()),
        Marker::Opposite => words.push(OPPOSITE_WORD.to_string()),
        Marker::None => {}
    }
    match c.modifier {
        Modifier::Fear => words.push(FEAR_WORD.to_string()),
        Modifier::Sad => words.push(SAD_WORD.to_string()),
        Modifier::None => {}
    }
    let len = rng.random_range(MIN_COMMENT_TOKENS..=MAX_COMMENT_TOKENS);
    while words.len() < len {
        words.push(fillers[rng.random_range(0..fillers.len())].clone());
    }
    words.shuffle(rng);
    words.join(" ")
}

/// Content words of a comment in sorted order; the filler carries no label
/// information, so this is the text-only sufficient statistic.
fn content_key(text: &str) -> Vec<String> {
    let mut key: Vec<String> = text
        .split_whitespace()
        .filter(|t| !is_filler(t))
        .map(str::to_string)
        .collect();
    key.sort();
    key
}

/// Accuracy on `eval` of a lookup table from content-word multiset to the
/// majority opinion in `fit`; unseen keys fall back to the global majority.
pub fn lookup_table_accuracy(fit: &[CommentRecord], eval: &[CommentRecord]) -> f64 {
    let mut table: HashMap<Vec<String>, [usize; 3]> = HashMap::new();
    let mut global = [0usize; 3];
    for r in fit {
        table.entry(content_key(&r.text)).or_default()[r.opinion.index()] += 1;
        global[r.opinion.index()] += 1;
    }
    let majority = |counts: &[usize; 3]| {
        (0..3)
            .fold((0, 0), |(bi, bc), i| if counts[i] > bc { (i, counts[i]) } else { (bi, bc) })
            .0
    };
    let fallback = majority(&global);
    if eval.is_empty() {
        return 0.0;
    }
    let correct = eval
        .iter()
        .filter(|r| {
            let pred = table.get(&content_key(&r.text)).map_or(fallback, majority);
            pred == r.opinion.index()
        })
        .count();
    correct as f64 / eval.len() as f64
}
