//! Deterministic 7:1:2 train/dev/test partitions.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusIndex, DataError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Dev,
    Test,
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Train => "train",
            Part::Dev => "dev",
            Part::Test => "test",
        }
    }
}

impl std::str::FromStr for Part {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Part::Train),
            "dev" => Ok(Part::Dev),
            "test" => Ok(Part::Test),
            _ => Err(format!("unknown split part {s:?} (expected train, dev or test)")),
        }
    }
}

/// Unit that is shuffled and partitioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Comment,
    /// All comments of one video land in the same part.
    Video,
}

impl std::str::FromStr for Granularity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "comment" => Ok(Granularity::Comment),
            "video" => Ok(Granularity::Video),
            _ => Err(format!("unknown split granularity {s:?} (expected comment or video)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub granularity: Granularity,
    /// comment_id -> part, in corpus order.
    pub assignment: IndexMap<String, Part>,
}

impl SplitAssignment {
    /// Comment ids of one part, in corpus order.
    pub fn members(&self, part: Part) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, p)| **p == part)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn count(&self, part: Part) -> usize {
        self.assignment.values().filter(|p| **p == part).count()
    }

    pub fn part_of(&self, comment_id: &str) -> Option<Part> {
        self.assignment.get(comment_id).copied()
    }

    /// Confirms the split covers exactly the comments of `index`.
    pub fn check_against(&self, index: &CorpusIndex) -> Result<(), DataError> {
        if self.assignment.len() != index.comments.len() {
            return Err(DataError::SplitMismatch(format!(
                "{} assigned comments, corpus has {}",
                self.assignment.len(),
                index.comments.len()
            )));
        }
        for c in &index.comments {
            if !self.assignment.contains_key(&c.comment_id) {
                return Err(DataError::SplitMismatch(format!(
                    "comment {} is not assigned",
                    c.comment_id
                )));
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DataError> {
        let raw = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| DataError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let json = serde_json::to_string_pretty(self).expect("split serializes");
        fs::write(path, json + "\n").map_err(|e| DataError::io(path, e))
    }
}

/// `(train, dev, test)` sizes for `n` units: dev and test are rounded to the
/// nearest integer, train takes the remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let dev = (0.1 * n as f64).round() as usize;
    let test = (0.2 * n as f64).round() as usize;
    (n - dev - test, dev, test)
}

pub fn split_corpus(
    index: &CorpusIndex,
    seed: u64,
    granularity: Granularity,
) -> Result<SplitAssignment, DataError> {
    if index.comments.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut units: Vec<&str> = match granularity {
        Granularity::Comment => index.comments.iter().map(|c| c.comment_id.as_str()).collect(),
        Granularity::Video => index.videos.keys().map(String::as_str).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    let (_, dev, test) = split_sizes(units.len());
    let unit_part: std::collections::HashMap<&str, Part> = units
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let part = if i < dev {
                Part::Dev
            } else if i < dev + test {
                Part::Test
            } else {
                Part::Train
            };
            (*u, part)
        })
        .collect();
    let assignment = index
        .comments
        .iter()
        .map(|c| {
            let key = match granularity {
                Granularity::Comment => c.comment_id.as_str(),
                Granularity::Video => c.video_id.as_str(),
            };
            let part = *unit_part.get(key).ok_or_else(|| DataError::DanglingVideo {
                comment_id: c.comment_id.clone(),
                video_id: c.video_id.clone(),
            })?;
            Ok((c.comment_id.clone(), part))
        })
        .collect::<Result<_, DataError>>()?;
    Ok(SplitAssignment {
        seed,
        granularity,
        assignment,
    })
}
