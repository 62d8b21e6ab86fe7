//! Binary frame-feature files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "CSMV" | version: u32 = 1 | rows: u32 | cols: u32 | rows*cols f32, row-major
//! ```
//!
//! The same layout stores precomputed text features.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::DataError;

pub const MAGIC: &[u8; 4] = b"CSMV";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Precomputed frame-level features for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures {
    pub video_id: String,
    /// `v_l x d_raw`.
    pub frames: Array2<f32>,
}

impl VideoFeatures {
    pub fn new(video_id: impl Into<String>, frames: Array2<f32>) -> Self {
        Self {
            video_id: video_id.into(),
            frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Serializes a matrix into the feature-file layout.
pub fn encode_matrix(m: &Array2<f32>) -> Vec<u8> {
    let (rows, cols) = m.dim();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * rows * cols);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses the feature-file layout. `origin` names the source in errors.
pub fn decode_matrix(bytes: &[u8], origin: &str) -> Result<Array2<f32>, DataError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(DataError::BadMagic {
            path: origin.to_string(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated {
            path: origin.to_string(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(DataError::UnsupportedVersion {
            path: origin.to_string(),
            version,
        });
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    if rows == 0 || cols == 0 {
        return Err(DataError::EmptyMatrix {
            path: origin.to_string(),
        });
    }
    let expected = HEADER_LEN + 4 * rows * cols;
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: origin.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(DataError::TrailingBytes {
            path: origin.to_string(),
            expected,
            actual: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFinite {
            path: origin.to_string(),
        });
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("shape checked above"))
}

pub fn read_matrix(path: &Path) -> Result<Array2<f32>, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_matrix(&bytes, &path.display().to_string())
}

pub fn write_matrix(path: &Path, m: &Array2<f32>) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DataError::io(parent, e))?;
    }
    fs::write(path, encode_matrix(m)).map_err(|e| DataError::io(path, e))
}

pub fn read_video_features(path: &Path, video_id: &str) -> Result<VideoFeatures, DataError> {
    Ok(VideoFeatures::new(video_id, read_matrix(path)?))
}

pub fn write_video_features(path: &Path, features: &VideoFeatures) -> Result<(), DataError> {
    write_matrix(path, &features.frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn decodes_row_major_payload() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CSMV");
        for w in [1u32, 2, 3] {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        for v in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let m = decode_matrix(&bytes, "mem").unwrap();
        assert_eq!(m, array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        assert_eq!(encode_matrix(&m), bytes);
    }

    #[test]
    fn altered_magic_is_rejected() {
        let mut bytes = encode_matrix(&array![[1.0f32]]);
        bytes[0] = b'X';
        assert!(matches!(
            decode_matrix(&bytes, "mem"),
            Err(DataError::BadMagic { .. })
        ));
    }

    #[test]
    fn short_payload_is_truncated() {
        let bytes = encode_matrix(&array![[1.0f32, 2.0], [3.0, 4.0]]);
        let err = decode_matrix(&bytes[..bytes.len() - 3], "mem").unwrap_err();
        assert!(matches!(
            err,
            DataError::Truncated {
                expected: 32,
                actual: 29,
                ..
            }
        ));
        assert!(matches!(
            decode_matrix(&bytes[..10], "mem"),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let bytes = encode_matrix(&array![[1.0f32, f32::NAN]]);
        assert!(matches!(
            decode_matrix(&bytes, "mem"),
            Err(DataError::NonFinite { .. })
        ));
        let bytes = encode_matrix(&array![[f32::INFINITY]]);
        assert!(matches!(
            decode_matrix(&bytes, "mem"),
            Err(DataError::NonFinite { .. })
        ));
    }

    #[test]
    fn trailing_bytes_and_bad_version_are_rejected() {
        let mut bytes = encode_matrix(&array![[1.0f32]]);
        bytes.push(0);
        assert!(matches!(
            decode_matrix(&bytes, "mem"),
            Err(DataError::TrailingBytes { .. })
        ));
        let mut bytes = encode_matrix(&array![[1.0f32]]);
        bytes[4] = 2;
        assert!(matches!(
            decode_matrix(&bytes, "mem"),
            Err(DataError::UnsupportedVersion { version: 2, .. })
        ));
    }
}
