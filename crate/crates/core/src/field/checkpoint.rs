//! Binary checkpoints.
//!
//! Layout (little-endian): `b"S3NF"`, version `u32`, `u32` length + JSON field
//! config, `u32` length + UTF-8 provenance text (the experiment config, may be
//! empty), `u32` tensor count, then per tensor `u32` rank, `u32` dims, and the
//! values as `f64`.

use std::path::Path;

use super::{FieldConfig, FieldParams};
use crate::error::{Error, Result};
use crate::io::{read_bytes, write_bytes};

const MAGIC: &[u8; 4] = b"S3NF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FieldParams,
    pub provenance: String,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_checkpoint(params: &FieldParams, provenance: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = serde_json::to_vec(&params.config).expect("config serializes");
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);
    put_u32(&mut out, provenance.len() as u32);
    out.extend_from_slice(provenance.as_bytes());
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for (_, data, shape) in tensors {
        put_u32(&mut out, shape.len() as u32);
        for d in shape {
            put_u32(&mut out, d as u32);
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.u32()? as usize;
    let config: FieldConfig = serde_json::from_slice(r.take(n)?).map_err(|e| e.to_string())?;
    let n = r.u32()? as usize;
    let provenance = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| e.to_string())?;
    let mut params = FieldParams::init(0, &config).map_err(|e| e.to_string())?;
    let count = r.u32()? as usize;
    let expected: Vec<Vec<usize>> = params.tensors().into_iter().map(|t| t.2).collect();
    if count != expected.len() {
        return Err(format!("expected {} tensors, found {count}", expected.len()));
    }
    for (slot, shape) in params.tensors_mut().into_iter().zip(&expected) {
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        if &dims != shape {
            return Err(format!("tensor shape {dims:?} does not match {shape:?}"));
        }
        for v in slot.iter_mut() {
            let b = r.take(8)?;
            *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err("trailing bytes after tensors".into());
    }
    Ok(Checkpoint { params, provenance })
}

pub fn save_checkpoint(path: &Path, params: &FieldParams, provenance: &str) -> Result<()> {
    write_bytes(path, &write_checkpoint(params, provenance))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = read_bytes(path)?;
    read_checkpoint(&bytes).map_err(|reason| Error::Format { path: path.to_path_buf(), reason })
}
