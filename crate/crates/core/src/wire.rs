//! Binary payload formats.
//!
//! A sparse vector is laid out as
//!
//! ```text
//! u32 dimension | u32 nnz | ceil(d/8) bitmap bytes (LSB first) | nnz x f32
//! ```
//!
//! with every integer and float little-endian and values in ascending index
//! order. Models, candidate sets and recommendation lists are built from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, RecModel};
use crate::nn::{GruCell, ParamTensor};

const MODEL_MAGIC: &[u8; 4] = b"CRM1";
const DENSE_MAGIC: &[u8; 4] = b"CRD1";

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("payload truncated at byte offset {offset}")]
    Truncated { offset: usize },
    #[error("bitmap has {bitmap} set bits but header declares {declared}")]
    CountMismatch { declared: u32, bitmap: u32 },
    #[error("bitmap sets bit {index} beyond dimension {dimension}")]
    BitOutOfRange { index: usize, dimension: u32 },
    #[error("{count} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("bad magic {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor {index} has {found} entries, expected {expected}")]
    TensorShape {
        index: usize,
        expected: usize,
        found: usize,
    },
}

/// A vector with explicit support, as carried on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub dimension: u32,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl SparseVector {
    /// Keeps the nonzero entries of `dense`, narrowed to f32.
    pub fn from_dense(dense: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in dense.iter().enumerate() {
            let v = v as f32;
            if v != 0.0 {
                indices.push(i as u32);
                values.push(v);
            }
        }
        Self {
            dimension: dense.len() as u32,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension as usize];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i as usize] = f64::from(v);
        }
        out
    }

    pub fn encoded_len(&self) -> usize {
        sparse_len(self.dimension as usize, self.nnz())
    }
}

/// Encoded size of a sparse vector with `dimension` entries and `nnz` nonzeros.
pub fn sparse_len(dimension: usize, nnz: usize) -> usize {
    8 + dimension.div_ceil(8) + 4 * nnz
}

/// Encoded size of a dense f32 vector with the same 8-byte header.
pub fn dense_len(dimension: usize) -> usize {
    8 + 4 * dimension
}

/// Encodes the nonzero entries of `dense` (narrowed to f32).
pub fn encode_sparse(dense: &[f64]) -> Vec<u8> {
    let mut out = Vec::new();
    put_sparse(&mut out, dense);
    out
}

fn put_sparse(out: &mut Vec<u8>, dense: &[f64]) {
    let d = dense.len();
    let start = out.len();
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    let bitmap = out.len();
    out.resize(bitmap + d.div_ceil(8), 0);
    let mut nnz = 0u32;
    for (i, &v) in dense.iter().enumerate() {
        let v = v as f32;
        if v != 0.0 {
            out[bitmap + i / 8] |= 1 << (i % 8);
            out.extend_from_slice(&v.to_le_bytes());
            nnz += 1;
        }
    }
    out[start + 4..start + 8].copy_from_slice(&nnz.to_le_bytes());
}

pub fn encode_sparse_vector(v: &SparseVector) -> Vec<u8> {
    encode_sparse(&v.to_dense())
}

/// Decodes a buffer holding exactly one sparse vector.
pub fn decode_sparse(bytes: &[u8]) -> Result<SparseVector, WireError> {
    let mut r = Reader::new(bytes);
    let v = r.sparse()?;
    r.finish()?;
    Ok(v)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() - self.pos < n {
            return Err(WireError::Truncated { offset: self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn sparse(&mut self) -> Result<SparseVector, WireError> {
        let dimension = self.u32()?;
        let declared = self.u32()?;
        let bitmap = self.take((dimension as usize).div_ceil(8))?;
        let mut indices = Vec::with_capacity(declared as usize);
        for (b, &byte) in bitmap.iter().enumerate() {
            let mut bits = byte;
            while bits != 0 {
                let i = b * 8 + bits.trailing_zeros() as usize;
                if i >= dimension as usize {
                    return Err(WireError::BitOutOfRange { index: i, dimension });
                }
                indices.push(i as u32);
                bits &= bits - 1;
            }
        }
        if indices.len() != declared as usize {
            return Err(WireError::CountMismatch {
                declared,
                bitmap: indices.len() as u32,
            });
        }
        let values = (0..declared).map(|_| self.f32()).collect::<Result<_, _>>()?;
        Ok(SparseVector {
            dimension,
            indices,
            values,
        })
    }

    fn finish(&self) -> Result<(), WireError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            count => Err(WireError::TrailingBytes {
                offset: self.pos,
                count,
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: ModelConfig,
    gamma: f64,
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4], model: &RecModel) {
    let header = serde_json::to_vec(&ModelHeader {
        config: model.config().clone(),
        gamma: model.gamma(),
    })
    .expect("model header serializes");
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
}

/// Header followed by every tensor as a sparse vector over its masked values.
/// A flag byte before each tensor records whether it carries a pruning mask.
pub fn encode_model(model: &RecModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, MODEL_MAGIC, model);
    for (_, t) in model.tensors() {
        out.push(u8::from(t.pruned_count() > 0));
        put_sparse(&mut out, &t.values);
    }
    out
}

/// Same framing as [`encode_model`] with every value stored densely.
pub fn encode_model_dense(model: &RecModel) -> Vec<u8> {
    let mut out = Vec::new();
    put_header(&mut out, DENSE_MAGIC, model);
    for (_, t) in model.tensors() {
        out.extend_from_slice(&(t.len() as u32).to_le_bytes());
        for &v in &t.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn empty_model(header: ModelHeader) -> Result<RecModel, WireError> {
    let c = &header.config;
    c.validate().map_err(|e| WireError::Header(e.to_string()))?;
    let (v, e, h) = (c.vocab_size, c.embedding_dim, c.hidden_dim);
    let gru = (0..c.gru_layers)
        .map(|l| GruCell::zeros(if l == 0 { e } else { h }, h))
        .collect();
    Ok(RecModel::from_parts(
        header.config.clone(),
        header.gamma,
        ParamTensor::zeros(&[v, e]),
        gru,
        ParamTensor::zeros(&[v, h]),
        ParamTensor::zeros(&[v]),
    ))
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<RecModel, WireError> {
    let found: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &found != magic {
        return Err(WireError::BadMagic { found });
    }
    let len = r.u32()? as usize;
    let header: ModelHeader =
        serde_json::from_slice(r.take(len)?).map_err(|e| WireError::Header(e.to_string()))?;
    empty_model(header)
}

/// Inverse of [`encode_model`]. Values come back widened from f32; flagged
/// tensors get their mask restricted to the transmitted support.
pub fn decode_model(bytes: &[u8]) -> Result<RecModel, WireError> {
    let mut r = Reader::new(bytes);
    let mut model = read_header(&mut r, MODEL_MAGIC)?;
    for (index, (_, t)) in model.tensors_mut().into_iter().enumerate() {
        let masked = r.u8()? != 0;
        let v = r.sparse()?;
        if v.dimension as usize != t.len() {
            return Err(WireError::TensorShape {
                index,
                expected: t.len(),
                found: v.dimension as usize,
            });
        }
        let mut keep = vec![false; t.len()];
        for (&i, &x) in v.indices.iter().zip(&v.values) {
            t.values[i as usize] = f64::from(x);
            keep[i as usize] = true;
        }
        if masked {
            t.restrict_mask(&keep);
        }
    }
    r.finish()?;
    Ok(model)
}

pub fn decode_model_dense(bytes: &[u8]) -> Result<RecModel, WireError> {
    let mut r = Reader::new(bytes);
    let mut model = read_header(&mut r, DENSE_MAGIC)?;
    for (index, (_, t)) in model.tensors_mut().into_iter().enumerate() {
        let n = r.u32()? as usize;
        if n != t.len() {
            return Err(WireError::TensorShape {
                index,
                expected: t.len(),
                found: n,
            });
        }
        for v in t.values.iter_mut() {
            *v = f64::from(r.f32()?);
        }
    }
    r.finish()?;
    Ok(model)
}

/// Candidate items with their sparse item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePayload {
    /// Vocabulary indices, in candidate order.
    pub items: Vec<u32>,
    pub embeddings: Vec<SparseVector>,
}

/// `u32 count`, then per candidate `u32 index` and one sparse vector.
pub fn encode_candidates(items: &[usize], embeddings: &[Vec<f64>]) -> Vec<u8> {
    assert_eq!(items.len(), embeddings.len());
    let mut out = Vec::new();
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for (&item, row) in items.iter().zip(embeddings) {
        out.extend_from_slice(&(item as u32).to_le_bytes());
        put_sparse(&mut out, row);
    }
    out
}

pub fn decode_candidates(bytes: &[u8]) -> Result<CandidatePayload, WireError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let mut items = Vec::new();
    let mut embeddings = Vec::new();
    for _ in 0..n {
        items.push(r.u32()?);
        embeddings.push(r.sparse()?);
    }
    r.finish()?;
    Ok(CandidatePayload { items, embeddings })
}

/// `u32 count` followed by `u32` vocabulary indices in rank order.
pub fn encode_item_list(items: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * items.len());
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    for &i in items {
        out.extend_from_slice(&(i as u32).to_le_bytes());
    }
    out
}

pub fn decode_item_list(bytes: &[u8]) -> Result<Vec<usize>, WireError> {
    let mut r = Reader::new(bytes);
    let n = r.u32()?;
    let items = (0..n).map(|_| r.u32().map(|i| i as usize)).collect::<Result<_, _>>()?;
    r.finish()?;
    Ok(items)
}
