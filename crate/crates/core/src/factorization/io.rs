//! The `MFAC` model container.
//!
//! ```text
//! "MFAC" | u16 version | u32 header length | JSON header
//!        | F | G^1..G^C (optional) | Z (optional) | u16 assignments
//! ```
//!
//! All integers and matrices are little-endian; matrices are row-major `f32`.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{FactorizationModel, ModelMeta};

pub const MODEL_MAGIC: &[u8; 4] = b"MFAC";
pub const MODEL_VERSION: u16 = 1;

const MAX_HEADER_BYTES: u32 = 1 << 20;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: ModelMeta,
    rows: usize,
    has_logits: bool,
    has_up_projections: bool,
}

/// Contents of a model file. Files written for a single language may omit
/// the up-projections, which then come from the base model.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredModel {
    pub meta: ModelMeta,
    pub factors: Matrix,
    pub up_projections: Option<Vec<Matrix>>,
    pub logits: Option<Matrix>,
    pub assignments: Vec<usize>,
}

impl StoredModel {
    /// Builds the model, using the stored up-projections or, if the file has
    /// none, `shared`.
    pub fn into_model(self, shared: Option<Arc<Vec<Matrix>>>) -> Result<FactorizationModel> {
        let ups = match (self.up_projections, shared) {
            (Some(own), _) => Arc::new(own),
            (None, Some(shared)) => shared,
            (None, None) => {
                return Err(Error::InvalidArgument(
                    "model file has no up-projections; supply the base model".into(),
                ))
            }
        };
        FactorizationModel::new(self.factors, ups, self.assignments, self.logits, self.meta)
    }
}

pub fn write_model<W: Write>(model: &FactorizationModel, mut w: W, include_up_projections: bool) -> Result<()> {
    if model.clusters() > usize::from(u16::MAX) + 1 {
        return Err(Error::InvalidArgument(format!(
            "{} clusters do not fit u16 assignments",
            model.clusters()
        )));
    }
    let header = Header {
        meta: model.meta().clone(),
        rows: model.num_tokens(),
        has_logits: model.logits().is_some(),
        has_up_projections: include_up_projections,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    write_f32s(&mut w, model.factors().data())?;
    if include_up_projections {
        for g in model.up_projections() {
            write_f32s(&mut w, g.data())?;
        }
    }
    if let Some(z) = model.logits() {
        write_f32s(&mut w, z.data())?;
    }
    let mut buf = Vec::with_capacity(model.num_tokens() * 2);
    for &a in model.assignments() {
        buf.extend_from_slice(&(a as u16).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<StoredModel> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::format("model file", "bad magic bytes"));
    }
    let mut u16buf = [0u8; 2];
    read_exact(&mut r, &mut u16buf)?;
    let version = u16::from_le_bytes(u16buf);
    if version != MODEL_VERSION {
        return Err(Error::format("model file", format!("unsupported version {version}")));
    }
    let mut u32buf = [0u8; 4];
    read_exact(&mut r, &mut u32buf)?;
    let len = u32::from_le_bytes(u32buf);
    if len > MAX_HEADER_BYTES {
        return Err(Error::format("model file", format!("header of {len} bytes is implausible")));
    }
    let mut json = vec![0u8; len as usize];
    read_exact(&mut r, &mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| Error::format("model file", format!("header: {e}")))?;
    let meta = header.meta;
    let rows = header.rows;

    let factors = read_matrix(&mut r, rows, meta.d_prime)?;
    let up_projections = if header.has_up_projections {
        Some(
            (0..meta.clusters)
                .map(|_| read_matrix(&mut r, meta.d_prime, meta.dim))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let logits = if header.has_logits {
        Some(read_matrix(&mut r, rows, meta.clusters)?)
    } else {
        None
    };
    let mut raw = vec![0u8; checked_len(rows, 2)?];
    read_exact(&mut r, &mut raw)?;
    let assignments = raw
        .chunks_exact(2)
        .map(|b| usize::from(u16::from_le_bytes([b[0], b[1]])))
        .collect();
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::format("model file", format!("{} trailing bytes", rest.len())));
    }
    Ok(StoredModel {
        meta,
        factors,
        up_projections,
        logits,
        assignments,
    })
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut raw = vec![0u8; checked_len(count, 4)?];
    read_exact(r, &mut raw)?;
    Ok(raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let data = read_f32s(r, checked_len(rows, cols)?)?;
    Matrix::from_vec(rows, cols, data)
}

fn checked_len(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .filter(|&n| n <= isize::MAX as usize / 8)
        .ok_or_else(|| Error::format("model file", "sizes overflow"))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format("model file", "truncated"),
        _ => Error::Io(e),
    })
}
