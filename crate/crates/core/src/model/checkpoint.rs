//! Checkpoint container.
//!
//! ```text
//! "VCCK" | version u32 = 1 | header_len u32 | header JSON (kind + ModelConfig)
//! | n_tensors u32 | per tensor: name_len u32, name UTF-8, rows u32, cols u32, rows*cols f32
//! ```
//!
//! All integers and floats are little-endian. Loading rebuilds the model from
//! the stored config and refuses any name or shape disagreement.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, SentimentModel, TextOnlyModel, VcCsa};
use crate::data::PaddedBatch;
use crate::tape::{Graph, Matrix, ParamStore, Var};

const MAGIC: &[u8; 4] = b"VCCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    VcCsa,
    TextOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    config: ModelConfig,
}

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub tensors: Vec<(String, Matrix)>,
}

pub fn save_checkpoint(path: &Path, model: &dyn SentimentModel) -> Result<(), ModelError> {
    let header = serde_json::to_vec(&Header {
        kind: model.kind(),
        config: model.config().clone(),
    })
    .expect("header serializes");
    let params = model.params();
    let mut out = Vec::with_capacity(64 + header.len() + 4 * params.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, value) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
        for v in value.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> ModelError {
        ModelError::Checkpoint {
            path: self.path.to_string(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let bytes = fs::read(path)?;
    let origin = path.display().to_string();
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: &origin,
    };
    if r.take(4)? != MAGIC {
        return Err(r.err("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| r.err(format!("bad header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.err("tensor name is not UTF-8"))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let payload = r.take(4 * rows * cols)?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(r.err(format!("tensor {name} has non-finite values")));
        }
        tensors.push((name, Matrix::from_shape_vec((rows, cols), values).expect("sized above")));
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes"));
    }
    Ok(Checkpoint {
        kind: header.kind,
        config: header.config,
        tensors,
    })
}

/// Overwrites every tensor of `params` from `tensors`; names and shapes must match exactly.
pub fn restore_params(params: &mut ParamStore, tensors: &[(String, Matrix)]) -> Result<(), ModelError> {
    if tensors.len() != params.len() {
        return Err(ModelError::ConfigMismatch(format!(
            "checkpoint holds {} tensors, model expects {}",
            tensors.len(),
            params.len()
        )));
    }
    for (name, value) in tensors {
        let id = params
            .id(name)
            .ok_or_else(|| ModelError::ConfigMismatch(format!("unexpected tensor {name}")))?;
        let slot = params.get_mut(id);
        if slot.dim() != value.dim() {
            return Err(ModelError::ConfigMismatch(format!(
                "tensor {name} has shape {:?}, model expects {:?}",
                value.dim(),
                slot.dim()
            )));
        }
        slot.assign(value);
    }
    Ok(())
}

/// A model of either kind, as restored from disk.
#[derive(Debug, Clone)]
pub enum AnyModel {
    VcCsa(VcCsa),
    TextOnly(TextOnlyModel),
}

impl AnyModel {
    pub fn as_vccsa(&self) -> Option<&VcCsa> {
        match self {
            AnyModel::VcCsa(m) => Some(m),
            AnyModel::TextOnly(_) => None,
        }
    }

    fn inner(&self) -> &dyn SentimentModel {
        match self {
            AnyModel::VcCsa(m) => m,
            AnyModel::TextOnly(m) => m,
        }
    }
}

impl SentimentModel for AnyModel {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn config(&self) -> &ModelConfig {
        self.inner().config()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::VcCsa(m) => m.params_mut(),
            AnyModel::TextOnly(m) => m.params_mut(),
        }
    }

    fn row_logits<'p>(&'p self, g: &mut Graph<'p>, batch: &PaddedBatch, row: usize) -> Result<(Var, Var), ModelError> {
        match self {
            AnyModel::VcCsa(m) => m.row_logits(g, batch, row),
            AnyModel::TextOnly(m) => m.row_logits(g, batch, row),
        }
    }
}

/// Loads a checkpoint and rebuilds its model. When `expected` is given, the
/// stored config must equal it.
pub fn load_model(path: &Path, expected: Option<&ModelConfig>) -> Result<AnyModel, ModelError> {
    let ckpt = load_checkpoint(path)?;
    if let Some(exp) = expected {
        if exp != &ckpt.config {
            return Err(ModelError::ConfigMismatch(format!(
                "checkpoint config {} differs from requested {}",
                serde_json::to_string(&ckpt.config).unwrap_or_default(),
                serde_json::to_string(exp).unwrap_or_default()
            )));
        }
    }
    let mut model = match ckpt.kind {
        ModelKind::VcCsa => AnyModel::VcCsa(VcCsa::new(ckpt.config.clone(), 0)?),
        ModelKind::TextOnly => AnyModel::TextOnly(TextOnlyModel::new(ckpt.config.clone(), 0)?),
    };
    restore_params(model.params_mut(), &ckpt.tensors)?;
    Ok(model)
}
