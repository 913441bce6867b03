//! Review embeddings.
//!
//! Embeddings either come from an `RPEM` file written by an external
//! language-model export tool, or from a deterministic signed feature-hashing
//! encoder that needs nothing outside this crate.
//!
//! File layout, little-endian:
//!
//! ```text
//! "RPEM" | u16 version = 1 | u32 dim | u64 count | count x (u32 review_id, dim x f32)
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RPEM";
pub const VERSION: u16 = 1;
pub const DEFAULT_DIM: usize = 768;
/// Texts are cut to this many whitespace tokens before encoding.
pub const MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    File(PathBuf),
    Hash { seed: u64 },
    Memory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<u32>,
    data: Vec<f64>,
    index: HashMap<u32, usize>,
    pub source: EmbeddingSource,
}

impl EmbeddingStore {
    pub fn new(dim: usize, source: EmbeddingSource) -> Self {
        EmbeddingStore {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            index: HashMap::new(),
            source,
        }
    }

    pub fn insert(&mut self, review_id: u32, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                op: "embedding insert",
                left: vec![self.dim],
                right: vec![vector.len()],
            });
        }
        if let Some(bad) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("review {review_id} has non-finite embedding entry {bad}")));
        }
        if self.index.insert(review_id, self.ids.len()).is_some() {
            return Err(Error::Data(format!("duplicate embedding for review {review_id}")));
        }
        self.ids.push(review_id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, review_id: u32) -> Option<&[f64]> {
        let pos = *self.index.get(&review_id)?;
        Some(&self.data[pos * self.dim..(pos + 1) * self.dim])
    }

    /// Errors unless every review of `ds` has an embedding.
    pub fn check_covers(&self, ds: &Dataset) -> Result<()> {
        let missing: Vec<u32> = ds
            .reviews
            .iter()
            .map(|r| r.review_id)
            .filter(|id| !self.index.contains_key(id))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(format!(
                "embedding store is missing {} reviews, first: {:?}",
                missing.len(),
                &missing[..missing.len().min(20)]
            )))
        }
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.ids
            .iter()
            .zip(self.data.chunks(self.dim.max(1)))
            .map(|(&id, v)| (id, v))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(18 + self.len() * (4 + 4 * self.dim));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            buf.extend_from_slice(&id.to_le_bytes());
            for &x in v {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    if cur.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected RPEM"));
    }
    let version = u16::from_le_bytes(cur.array()?);
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(cur.array()?) as usize;
    let count = u64::from_le_bytes(cur.array()?);

    let mut store = EmbeddingStore::new(dim, EmbeddingSource::File(path.to_path_buf()));
    let mut vector = vec![0.0; dim];
    for _ in 0..count {
        let id = u32::from_le_bytes(cur.array()?);
        for slot in vector.iter_mut() {
            *slot = f32::from_le_bytes(cur.array()?) as f64;
        }
        store.insert(id, &vector).map_err(|e| Error::format(path, e.to_string()))?;
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice length checked"))
    }
}

fn token_hash(token: &str, seed: u64) -> u64 {
    // FNV-1a over the seed then the token bytes, with a splitmix finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(token.as_bytes()) {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Signed feature hashing of the first [`MAX_TOKENS`] whitespace tokens,
/// L2-normalized. Empty texts give the zero vector.
pub fn hash_text(text: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in text.split_whitespace().take(MAX_TOKENS) {
        let h = token_hash(token, seed);
        let bucket = (h % dim as u64) as usize;
        v[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub fn hash_encode(ds: &Dataset, dim: usize, seed: u64) -> Result<EmbeddingStore> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be >= 1".into()));
    }
    let mut store = EmbeddingStore::new(dim, EmbeddingSource::Hash { seed });
    for r in &ds.reviews {
        store.insert(r.review_id, &hash_text(&r.text, dim, seed))?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_from(dim: usize, rows: &[(u32, Vec<f32>)]) -> EmbeddingStore {
        let mut s = EmbeddingStore::new(dim, EmbeddingSource::Memory);
        for (id, v) in rows {
            let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            s.insert(*id, &v).unwrap();
        }
        s
    }

    #[test]
    fn load_three_records() {
        let rows: Vec<(u32, Vec<f32>)> =
            (0..3).map(|i| (i, (0..8).map(|j| (i * 8 + j) as f32 * 0.5).collect())).collect();
        let store = store_from(8, &rows);
        let f = tempfile::NamedTempFile::new().unwrap();
        store.write(f.path()).unwrap();
        let loaded = load_embeddings(f.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        assert_eq!(loaded.dim(), 8);
        assert_eq!(loaded.get(2), store.get(2));
    }

    #[test]
    fn load_empty_store() {
        let f = tempfile::NamedTempFile::new().unwrap();
        EmbeddingStore::new(4, EmbeddingSource::Memory).write(f.path()).unwrap();
        let loaded = load_embeddings(f.path()).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.dim(), 4);
    }

    #[test]
    fn header_layout_is_exact() {
        let store = store_from(2, &[(7, vec![1.0, -2.0])]);
        let f = tempfile::NamedTempFile::new().unwrap();
        store.write(f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        let mut expected = b"RPEM".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&7u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    fn write_raw(bytes: &[u8]) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), bytes).unwrap();
        f
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let store = store_from(2, &[(0, vec![1.0, 2.0]), (1, vec![3.0, 4.0])]);
        let f = tempfile::NamedTempFile::new().unwrap();
        store.write(f.path()).unwrap();
        let good = std::fs::read(f.path()).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(load_embeddings(write_raw(&bad_magic).path()).is_err());

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        let err = load_embeddings(write_raw(&bad_version).path()).unwrap_err();
        assert!(err.to_string().contains("version"));

        let truncated = &good[..good.len() - 3];
        let err = load_embeddings(write_raw(truncated).path()).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let mut bytes = b"RPEM".to_vec();
        bytes.extend_from_slice(&1u16.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        for _ in 0..2 {
            bytes.extend_from_slice(&5u32.to_le_bytes());
            bytes.extend_from_slice(&0.5f32.to_le_bytes());
        }
        let err = load_embeddings(write_raw(&bytes).path()).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }

    #[test]
    fn hashing_encoder_properties() {
        let a = hash_text("the pasta was great", 32, 7);
        assert_eq!(a, hash_text("the pasta was great", 32, 7));
        assert_ne!(a, hash_text("the pasta was great", 32, 8));
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(hash_text("", 32, 7).iter().all(|&x| x == 0.0));
        assert!(hash_text("   ", 32, 7).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hashing_truncates_long_texts() {
        let long: String = (0..600).map(|i| format!("w{i} ")).collect();
        let cut: String = (0..MAX_TOKENS).map(|i| format!("w{i} ")).collect();
        assert_eq!(hash_text(&long, 16, 1), hash_text(&cut, 16, 1));
    }
}
