//! Comment records and their newline-delimited JSON file format.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::DataError;

/// Three-way opinion schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Opinion {
    Positive,
    Neutral,
    Negative,
}

/// Plutchik's eight basic emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Fear,
    Disgust,
    Anger,
    Sadness,
    Joy,
    Trust,
    Anticipation,
    Surprise,
}

/// A closed label set with a stable index order.
pub trait Label: Copy + Eq + fmt::Debug + 'static {
    const ALL: &'static [Self];
    const TASK: &'static str;
    fn name(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).unwrap()
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|l| l.name()).collect()
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|l| l.name() == s)
    }
}

impl Label for Opinion {
    const ALL: &'static [Self] = &[Opinion::Positive, Opinion::Neutral, Opinion::Negative];
    const TASK: &'static str = "opinion";

    fn name(self) -> &'static str {
        match self {
            Opinion::Positive => "positive",
            Opinion::Neutral => "neutral",
            Opinion::Negative => "negative",
        }
    }
}

impl Label for Emotion {
    const ALL: &'static [Self] = &[
        Emotion::Fear,
        Emotion::Disgust,
        Emotion::Anger,
        Emotion::Sadness,
        Emotion::Joy,
        Emotion::Trust,
        Emotion::Anticipation,
        Emotion::Surprise,
    ];
    const TASK: &'static str = "emotion";

    fn name(self) -> &'static str {
        match self {
            Emotion::Fear => "fear",
            Emotion::Disgust => "disgust",
            Emotion::Anger => "anger",
            Emotion::Sadness => "sadness",
            Emotion::Joy => "joy",
            Emotion::Trust => "trust",
            Emotion::Anticipation => "anticipation",
            Emotion::Surprise => "surprise",
        }
    }
}

macro_rules! label_display {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$t as Label>::parse(s).ok_or_else(|| format!("unknown {} label {s:?}", <$t>::TASK))
            }
        }
    };
}

label_display!(Opinion);
label_display!(Emotion);

/// One annotated comment on one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: String,
    pub video_id: String,
    pub text: String,
    pub opinion: Opinion,
    pub emotion: Emotion,
}

fn string_field(obj: &Map<String, Value>, field: &'static str, line: usize) -> Result<String, DataError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(DataError::Json {
            line,
            message: format!("field {field} must be a string"),
        }),
        None => Err(DataError::MissingField { line, field }),
    }
}

fn label_field<L: Label>(obj: &Map<String, Value>, field: &'static str, line: usize) -> Result<L, DataError> {
    let raw = string_field(obj, field, line)?;
    L::parse(&raw).ok_or(DataError::UnknownLabel {
        line,
        field,
        value: raw,
    })
}

/// Parses one JSON line into a record. `line` is 1-based.
pub fn parse_comment_line(text: &str, line: usize) -> Result<CommentRecord, DataError> {
    let value: Value = serde_json::from_str(text).map_err(|e| DataError::Json {
        line,
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(DataError::Json {
            line,
            message: "record is not an object".into(),
        });
    };
    let record = CommentRecord {
        comment_id: string_field(&obj, "comment_id", line)?,
        video_id: string_field(&obj, "video_id", line)?,
        text: string_field(&obj, "text", line)?,
        opinion: label_field(&obj, "opinion", line)?,
        emotion: label_field(&obj, "emotion", line)?,
    };
    if record.text.trim().is_empty() {
        return Err(DataError::EmptyText {
            comment_id: record.comment_id,
        });
    }
    Ok(record)
}

/// Parses newline-delimited records, preserving order. Blank lines are skipped.
pub fn parse_comments(content: &str) -> Result<Vec<CommentRecord>, DataError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_comment_line(line, i + 1)?;
        if !seen.insert(record.comment_id.clone()) {
            return Err(DataError::DuplicateId {
                id: record.comment_id,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_comments(path: &Path) -> Result<Vec<CommentRecord>, DataError> {
    let content = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_comments(&content)
}

pub fn format_comments(records: &[CommentRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("comment records always serialize"));
        out.push('\n');
    }
    out
}

pub fn write_comments(path: &Path, records: &[CommentRecord]) -> Result<(), DataError> {
    let mut file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    file.write_all(format_comments(records).as_bytes())
        .map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"comment_id":"c1","video_id":"v1","text":"so nice","opinion":"positive","emotion":"joy"}"#;

    #[test]
    fn parses_valid_record() {
        let r = parse_comment_line(GOOD, 1).unwrap();
        assert_eq!(r.opinion, Opinion::Positive);
        assert_eq!(r.emotion, Emotion::Joy);
        assert_eq!(r.video_id, "v1");
    }

    #[test]
    fn unknown_emotion_label() {
        let line = GOOD.replace("\"joy\"", "\"boredom\"");
        match parse_comment_line(&line, 4) {
            Err(DataError::UnknownLabel { line, field, value }) => {
                assert_eq!((line, field, value.as_str()), (4, "emotion", "boredom"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let line = GOOD.replace("\"joy\"", "\"happy\"");
        assert!(matches!(
            parse_comment_line(&line, 1),
            Err(DataError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn missing_field_and_duplicate_id() {
        let line = r#"{"comment_id":"c1","video_id":"v1","text":"x","opinion":"neutral"}"#;
        assert!(matches!(
            parse_comment_line(line, 1),
            Err(DataError::MissingField {
                field: "emotion",
                ..
            })
        ));
        let content = format!("{GOOD}\n{GOOD}\n");
        assert!(matches!(
            parse_comments(&content),
            Err(DataError::DuplicateId { id }) if id == "c1"
        ));
    }

    #[test]
    fn whitespace_text_is_rejected() {
        let line = GOOD.replace("so nice", "   ");
        assert!(matches!(
            parse_comment_line(&line, 1),
            Err(DataError::EmptyText { .. })
        ));
    }

    #[test]
    fn label_indices_follow_schema_order() {
        assert_eq!(Opinion::ALL.len(), 3);
        assert_eq!(Emotion::ALL.len(), 8);
        for (i, e) in Emotion::ALL.iter().enumerate() {
            assert_eq!(e.index(), i);
            assert_eq!(Emotion::parse(e.name()), Some(*e));
        }
        assert_eq!("negative".parse::<Opinion>().unwrap(), Opinion::Negative);
    }

    #[test]
    fn format_then_parse_preserves_records() {
        let records = parse_comments(&format!("{GOOD}\n")).unwrap();
        assert_eq!(parse_comments(&format_comments(&records)).unwrap(), records);
    }
}
