//! Binary checkpoints: the resolved run configuration followed by every
//! parameter matrix with its shape.
//!
//! Layout (little-endian):
//! `"FCK1" | u32 version | u32 config_len | config text | u32 backbone_tensors |
//! u32 has_iam | [u32 iam_reduction | f64 iam_dropout] | u32 tensor_count |
//! tensor_count × (u32 rows | u32 cols | rows·cols × f64)`.

use std::path::Path;

use crate::config::RunConfig;
use crate::engine::{BackboneParams, Pipeline};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::transduction::iam::IamParams;

pub const CKPT_MAGIC: &[u8; 4] = b"FCK1";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub pipeline: Pipeline,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit the checkpoint header")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let text = ckpt.config.to_text();
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let backbone = ckpt.pipeline.backbone.tensors();
    put_u32(&mut out, backbone.len())?;
    match &ckpt.pipeline.iam {
        Some(iam) => {
            put_u32(&mut out, 1)?;
            put_u32(&mut out, iam.reduction())?;
            out.extend_from_slice(&iam.dropout_rate().to_le_bytes());
        }
        None => put_u32(&mut out, 0)?,
    }
    let tensors = ckpt.pipeline.tensors();
    put_u32(&mut out, tensors.len())?;
    for t in tensors {
        put_u32(&mut out, t.rows())?;
        put_u32(&mut out, t.cols())?;
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::TruncatedFile(format!("checkpoint ends inside {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CKPT_MAGIC {
        return Err(Error::BadMagic(origin.to_path_buf()));
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION as usize {
        return Err(Error::BadHeader(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")?;
    let text = std::str::from_utf8(r.take(len, "config")?)
        .map_err(|_| Error::BadHeader("embedded config is not UTF-8".into()))?;
    let config = RunConfig::parse_str(text)?;
    let n_backbone = r.u32("backbone count")?;
    let iam_meta = match r.u32("IAM flag")? {
        0 => None,
        1 => Some((r.u32("IAM reduction")?, r.f64("IAM dropout")?)),
        v => return Err(Error::BadHeader(format!("IAM flag {v}"))),
    };
    let count = r.u32("tensor count")?;
    if count < n_backbone {
        return Err(Error::BadHeader(format!("{count} tensors but {n_backbone} backbone tensors")));
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let (rows, cols) = (r.u32("tensor shape")?, r.u32("tensor shape")?);
        let n = rows.checked_mul(cols).ok_or_else(|| Error::BadHeader(format!("tensor shape {rows}x{cols}")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::BadHeader("tensor too large".into()))?, "tensor data")?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("checkpoint tensor"));
        }
        tensors.push(Matrix::new(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::BadHeader(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let iam_tensors = tensors.split_off(n_backbone);
    let backbone = BackboneParams::from_tensors(tensors)?;
    let iam = match iam_meta {
        Some((reduction, dropout)) => Some(IamParams::from_tensors(iam_tensors, dropout, reduction)?),
        None if iam_tensors.is_empty() => None,
        None => return Err(Error::BadHeader("IAM tensors present but IAM flag unset".into())),
    };
    Ok(Checkpoint { config, pipeline: Pipeline { backbone, iam } })
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?, path)
}
