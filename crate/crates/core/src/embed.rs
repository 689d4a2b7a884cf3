//! Frozen text-embedding providers and the TGEM embedding file format.
//!
//! TGEM layout, little-endian:
//!
//! ```text
//! magic    4 bytes  "TGEM"
//! version  u32      1
//! n        u64      number of records
//! d        u64      embedding dimension
//! n × { row_id: u64, values: d × f32 }
//! ```

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::SerializedRow;

pub const TGEM_MAGIC: &[u8; 4] = b"TGEM";
pub const TGEM_VERSION: u32 = 1;
pub const TGEM_HEADER_LEN: u64 = 24;

/// Default dimension of the hashing encoder.
pub const DEFAULT_HASH_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum();
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            0.0
        } else {
            dot / denom
        }
    }
}

/// Read-only row_id → embedding map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rows: BTreeMap<u64, Embedding>,
    provider_tag: String,
}

impl EmbeddingStore {
    pub fn new(dim: usize, provider_tag: impl Into<String>) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
            provider_tag: provider_tag.into(),
        }
    }

    pub fn insert(&mut self, row_id: u64, embedding: Embedding) -> Result<()> {
        if embedding.dim() != self.dim {
            return Err(Error::EmbeddingDim {
                row_id,
                expected: self.dim,
                found: embedding.dim(),
            });
        }
        if let Some(v) = embedding.0.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "embedding of row {row_id} contains {v}"
            )));
        }
        if self.rows.insert(row_id, embedding).is_some() {
            return Err(Error::DuplicateRowId(row_id));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn provider_tag(&self) -> &str {
        &self.provider_tag
    }

    pub fn get(&self, row_id: u64) -> Result<&Embedding> {
        self.rows
            .get(&row_id)
            .ok_or(Error::MissingEmbedding(row_id))
    }

    pub fn contains(&self, row_id: u64) -> bool {
        self.rows.contains_key(&row_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Embedding)> {
        self.rows.iter().map(|(&k, v)| (k, v))
    }

    /// Errors on the first row id without an embedding.
    pub fn check_covers(&self, row_ids: &[u64]) -> Result<()> {
        match row_ids.iter().find(|id| !self.contains(**id)) {
            Some(&id) => Err(Error::MissingEmbedding(id)),
            None => Ok(()),
        }
    }
}

/// A frozen text encoder.
pub trait EmbeddingProvider {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, row: &SerializedRow) -> Result<Embedding>;
}

/// Embeds every row in one pass into a fresh store.
pub fn build_store(
    provider: &dyn EmbeddingProvider,
    rows: &[SerializedRow],
) -> Result<EmbeddingStore> {
    let mut store = EmbeddingStore::new(provider.dim(), provider.tag());
    for row in rows {
        store.insert(row.row_id, provider.embed(row)?)?;
    }
    Ok(store)
}

/// Signed feature hashing of character trigrams.
#[derive(Debug, Clone, Copy)]
pub struct HashEncoder {
    pub dim: usize,
}

impl Default for HashEncoder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_HASH_DIM,
        }
    }
}

impl EmbeddingProvider for HashEncoder {
    fn tag(&self) -> &str {
        "hash"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, row: &SerializedRow) -> Result<Embedding> {
        Ok(hash_embed(&row.text, self.dim))
    }
}

/// Serves precomputed embeddings, e.g. from a TGEM file.
#[derive(Debug, Clone)]
pub struct FileEncoder {
    store: EmbeddingStore,
}

impl FileEncoder {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(load_embeddings(path)?))
    }

    pub fn store(&self) -> &EmbeddingStore {
        &self.store
    }
}

impl EmbeddingProvider for FileEncoder {
    fn tag(&self) -> &str {
        self.store.provider_tag()
    }

    fn dim(&self) -> usize {
        self.store.dim()
    }

    fn embed(&self, row: &SerializedRow) -> Result<Embedding> {
        self.store.get(row.row_id).cloned()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

// splitmix64 finalizer, used to derive the sign bit independently of the bucket.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Character-trigram feature hashing into `dim` buckets with a ±1 sign
/// hash, L2-normalized. The text is padded with boundary markers so short
/// strings still yield trigrams; empty text maps to the zero vector.
pub fn hash_embed(text: &str, dim: usize) -> Embedding {
    assert!(dim >= 2, "hash embedding dim must be at least 2");
    let mut acc = vec![0.0f64; dim];
    if text.is_empty() {
        return Embedding(vec![0.0; dim]);
    }
    let chars: Vec<char> = std::iter::once('\u{2}')
        .chain(text.chars())
        .chain(std::iter::once('\u{3}'))
        .collect();
    let mut buf = [0u8; 12];
    let mut first_bucket = None;
    for w in chars.windows(3) {
        let mut len = 0;
        for c in w {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(&buf[..len]);
        let bucket = (h % dim as u64) as usize;
        let sign = if mix(h) >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
        first_bucket.get_or_insert(bucket);
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        // every trigram cancelled; fall back to a deterministic basis vector
        acc[first_bucket.unwrap_or(0)] = 1.0;
        return Embedding(acc.into_iter().map(|v| v as f32).collect());
    }
    Embedding(acc.into_iter().map(|v| (v / norm) as f32).collect())
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(TGEM_MAGIC).map_err(io)?;
    w.write_all(&TGEM_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(store.len() as u64).to_le_bytes())
        .map_err(io)?;
    w.write_all(&(store.dim() as u64).to_le_bytes())
        .map_err(io)?;
    for (row_id, emb) in store.iter() {
        w.write_all(&row_id.to_le_bytes()).map_err(io)?;
        for v in emb.as_slice() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tgem(&bytes)
}

/// Parses a TGEM byte buffer, validating header sizes against its length.
pub fn decode_tgem(bytes: &[u8]) -> Result<EmbeddingStore> {
    if bytes.len() < 4 || &bytes[..4] != TGEM_MAGIC {
        return Err(Error::BadMagic);
    }
    if (bytes.len() as u64) < TGEM_HEADER_LEN {
        return Err(Error::Truncated {
            expected: TGEM_HEADER_LEN,
            found: bytes.len() as u64,
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u32_at(4);
    if version != TGEM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u64_at(8);
    let d = u64_at(16);
    if d == 0 {
        return Err(Error::InvalidDim(d));
    }
    let record = d
        .checked_mul(4)
        .and_then(|b| b.checked_add(8))
        .ok_or(Error::InvalidDim(d))?;
    let expected = n.checked_mul(record).ok_or(Error::InvalidDim(d))?;
    let found = bytes.len() as u64 - TGEM_HEADER_LEN;
    if found != expected {
        return Err(Error::Truncated { expected, found });
    }

    let d = d as usize;
    let mut store = EmbeddingStore::new(d, "file");
    let mut off = TGEM_HEADER_LEN as usize;
    for _ in 0..n {
        let row_id = u64_at(off);
        off += 8;
        let values = bytes[off..off + 4 * d]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        off += 4 * d;
        store.insert(row_id, Embedding(values))?;
    }
    Ok(store)
}
