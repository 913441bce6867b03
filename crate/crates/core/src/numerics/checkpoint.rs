//! Parameter checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "RPCK" | u16 version = 1 | u32 meta_len | meta_len bytes of JSON metadata
//! | u32 tensor_count | per tensor:
//!     u32 name_len | name bytes (UTF-8) | u32 rank | rank x u64 dims | f64 data
//! ```

use std::path::Path;

use serde_json::Value;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RPCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub params: ParamStore,
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&ckpt.metadata)?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for p in ckpt.params.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.shape.len() as u32).to_le_bytes());
        for &d in &p.value.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &p.value.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format(path, format!("truncated at byte {pos}")))?;
        pos += n;
        Ok(s)
    };
    if take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected RPCK"));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let metadata: Value = serde_json::from_slice(take(meta_len)?)
        .map_err(|e| Error::format(path, format!("bad metadata: {e}")))?;
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.id(&name).is_some() {
            return Err(Error::format(path, format!("duplicate tensor `{name}`")));
        }
        params.add(name, Tensor::new(shape, data));
    }
    if pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(Checkpoint { metadata, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut params = ParamStore::new();
        params.add("a", Tensor::new(vec![2, 3], vec![0.1, -2.5, 3.0, f64::MIN_POSITIVE, 1e300, -0.0]));
        params.add("bias", Tensor::scalar(7.25));
        let ckpt = Checkpoint {
            metadata: serde_json::json!({"variant": "full", "epoch": 3}),
            params,
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_checkpoint(f.path(), &ckpt).unwrap();
        let back = read_checkpoint(f.path()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn rejects_truncated_file() {
        let mut params = ParamStore::new();
        params.add("a", Tensor::vector(vec![1.0, 2.0]));
        let ckpt = Checkpoint { metadata: Value::Null, params };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_checkpoint(f.path(), &ckpt).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 1]).unwrap();
        assert!(read_checkpoint(f.path()).unwrap_err().to_string().contains("truncated"));
    }
}
