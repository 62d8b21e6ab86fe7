//! Label statistics and the annotation cross-validation rule.

use indexmap::IndexMap;
use serde::Serialize;

use super::{CommentRecord, DataError, Emotion, Label, Opinion};

/// Fraction of disagreeing items above which an annotation batch is sent back.
pub const CONSISTENCY_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelDistribution {
    pub total: usize,
    pub opinion: IndexMap<String, f64>,
    pub emotion: IndexMap<String, f64>,
}

fn fractions<L: Label>(labels: impl Iterator<Item = L>, total: usize) -> IndexMap<String, f64> {
    let mut counts = vec![0usize; L::ALL.len()];
    for l in labels {
        counts[l.index()] += 1;
    }
    L::ALL
        .iter()
        .zip(counts)
        .map(|(l, c)| (l.name().to_string(), c as f64 / total as f64))
        .collect()
}

pub fn label_distribution(comments: &[CommentRecord]) -> Result<LabelDistribution, DataError> {
    if comments.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let total = comments.len();
    Ok(LabelDistribution {
        total,
        opinion: fractions::<Opinion>(comments.iter().map(|c| c.opinion), total),
        emotion: fractions::<Emotion>(comments.iter().map(|c| c.emotion), total),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyResult {
    pub items: usize,
    pub disagreements: usize,
    pub rate: f64,
    pub flagged: bool,
}

/// An item disagrees when the original label differs from either validator.
/// The batch is flagged when the disagreement rate strictly exceeds 10%.
pub fn consistency_check<T: PartialEq>(
    original: &[T],
    validator_a: &[T],
    validator_b: &[T],
) -> Result<ConsistencyResult, DataError> {
    if original.len() != validator_a.len() {
        return Err(DataError::LengthMismatch(original.len(), validator_a.len()));
    }
    if original.len() != validator_b.len() {
        return Err(DataError::LengthMismatch(original.len(), validator_b.len()));
    }
    let disagreements = original
        .iter()
        .zip(validator_a)
        .zip(validator_b)
        .filter(|((o, a), b)| o != a || o != b)
        .count();
    let items = original.len();
    let rate = if items == 0 {
        0.0
    } else {
        disagreements as f64 / items as f64
    };
    Ok(ConsistencyResult {
        items,
        disagreements,
        rate,
        flagged: rate > CONSISTENCY_THRESHOLD,
    })
}
