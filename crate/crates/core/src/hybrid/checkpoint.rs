//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "QUNL"  u32 version  u32 tag_len  tag bytes  u32 tensor_count
//! per tensor: u32 name_len  name bytes  u32 rank  u32 dims[rank]  f64 data[prod(dims)]
//! ```
//!
//! Tensors are written in name order, so equal models give equal files.

use std::path::Path;
use std::str::FromStr;

use super::arch::{ArchSpec, DatasetTag};
use super::model::HybridModel;
use crate::diffcore::{LayerParams, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QUNL";
pub const VERSION: u32 = 1;

/// Serializes a model to bytes.
pub fn encode(model: &HybridModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let tag = model.spec().dataset.as_str().as_bytes();
    out.extend_from_slice(&(tag.len() as u32).to_le_bytes());
    out.extend_from_slice(tag);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, t) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::at_byte(self.bytes.len(), format!("truncated {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let at = self.pos;
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::at_byte(at, format!("{what} is not UTF-8")))
    }
}

/// Parses a checkpoint, inferring the architecture from the tensor shapes.
pub fn decode(bytes: &[u8]) -> Result<HybridModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::at_byte(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::at_byte(4, format!("unsupported checkpoint version {version}")));
    }
    let tag_at = r.pos;
    let tag = r.string("spec tag")?;
    let dataset = DatasetTag::from_str(&tag)
        .map_err(|_| Error::at_byte(tag_at, format!("unknown spec tag {tag:?}")))?;
    let count = r.u32("tensor count")? as usize;
    let mut params = LayerParams::new();
    for _ in 0..count {
        let name_at = r.pos;
        let name = r.string("tensor name")?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::at_byte(r.pos - 4, format!("bad rank {rank} for {name}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n.saturating_mul(8), "tensor payload")?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::at_byte(name_at, e.to_string()))?;
        if params.get(&name).is_some() {
            return Err(Error::at_byte(name_at, format!("duplicate tensor {name}")));
        }
        params.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::at_byte(r.pos, "trailing bytes after last tensor"));
    }
    let spec = infer_spec(dataset, &params).map_err(|e| Error::at_byte(bytes.len(), e.to_string()))?;
    HybridModel::from_params(spec, params).map_err(|e| Error::at_byte(bytes.len(), e.to_string()))
}

fn dim(params: &LayerParams, name: &str, axis: usize) -> Result<usize> {
    let t = params.require(name)?;
    t.shape()
        .get(axis)
        .copied()
        .ok_or_else(|| Error::dim(format!("{name} has rank {}", t.rank())))
}

fn infer_spec(dataset: DatasetTag, params: &LayerParams) -> Result<ArchSpec> {
    let mut spec = ArchSpec::for_dataset(dataset);
    let q = spec.qubits;
    let theta = params.require("vqc.theta")?.len();
    if theta % (2 * q) != 0 {
        return Err(Error::dim(format!("vqc.theta length {theta} is not a multiple of {}", 2 * q)));
    }
    spec.layers = theta / (2 * q);
    if dataset.is_image() {
        spec.conv_channels = Some((
            dim(params, "extractor.conv1.weight", 0)?,
            dim(params, "extractor.conv2.weight", 0)?,
        ));
    }
    if params.get("head.fc1.weight").is_some() {
        spec.head_hidden = Some(dim(params, "head.fc1.weight", 1)?);
        spec.classes = dim(params, "head.fc2.bias", 0)?;
    } else {
        spec.head_hidden = None;
        spec.classes = dim(params, "head.bias", 0)?;
    }
    Ok(spec)
}

pub fn save_checkpoint(model: &HybridModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<HybridModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
