//! Pluggable embedders and the on-disk embedding cache.
//!
//! Cache layout under `cache_dir`: `<hash>.emb` holds an 8-byte header
//! (rows u32, dims u32, little endian) followed by row-major `f32` values;
//! `meta.json` maps each hash to its chunk spans, content hashes and
//! embedder id.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Chunk, FallbackError};
use crate::exec::{self, ExecMode};

pub trait Embedder: Send + Sync {
    /// Stable identifier; part of the cache key.
    fn id(&self) -> String;
    fn dims(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

/// Seeded hash projection of lower-cased word tokens onto a fixed number of
/// dimensions, L2-normalized. Deterministic and model-free.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub seed: u64,
    pub dims: usize,
}

impl HashEmbedder {
    pub const DEFAULT_DIMS: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            dims: Self::DEFAULT_DIMS,
        }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-projection-v1/seed={}/dims={}", self.seed, self.dims)
    }

    fn dims(&self) -> usize {
        self.dims
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dims];
        for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let token = token.to_lowercase();
            let mut block = 0u32;
            let mut filled = 0;
            while filled < self.dims {
                let mut h = Sha256::new();
                h.update(self.seed.to_le_bytes());
                h.update(block.to_le_bytes());
                h.update(token.as_bytes());
                for b in h.finalize() {
                    if filled == self.dims {
                        break;
                    }
                    v[filled] += (f32::from(b) - 127.5) / 127.5;
                    filled += 1;
                }
                block += 1;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

fn sha_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub embedder_id: String,
    pub rows: usize,
    pub dims: usize,
    pub chunk_spans: Vec<(usize, usize)>,
    pub content_hashes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(embedder_id: &str, chunks: &[Chunk]) -> String {
        let mut h = Sha256::new();
        h.update(embedder_id.as_bytes());
        for c in chunks {
            h.update([0u8]);
            h.update(c.text.as_bytes());
        }
        format!("{:x}", h.finalize())
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<(), FallbackError> {
        fs::create_dir_all(&self.dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        tmp.persist(self.dir.join(name)).map_err(|e| FallbackError::from(e.error))?;
        Ok(())
    }

    pub fn read_meta(&self) -> BTreeMap<String, CacheMeta> {
        fs::read(self.dir.join("meta.json"))
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    pub fn load(&self, key: &str) -> Option<Vec<Vec<f32>>> {
        let bytes = fs::read(self.dir.join(format!("{key}.emb"))).ok()?;
        let header: [u8; 8] = bytes.get(..8)?.try_into().ok()?;
        let rows = u32::from_le_bytes(header[..4].try_into().ok()?) as usize;
        let dims = u32::from_le_bytes(header[4..].try_into().ok()?) as usize;
        let body = &bytes[8..];
        if body.len() != rows * dims * 4 {
            return None;
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
            .collect();
        Some(floats.chunks(dims.max(1)).take(rows).map(<[f32]>::to_vec).collect())
    }

    pub fn store(&self, key: &str, embedder_id: &str, chunks: &[Chunk], matrix: &[Vec<f32>]) -> Result<(), FallbackError> {
        let dims = matrix.first().map_or(0, Vec::len);
        let mut bytes = Vec::with_capacity(8 + matrix.len() * dims * 4);
        bytes.extend((matrix.len() as u32).to_le_bytes());
        bytes.extend((dims as u32).to_le_bytes());
        for row in matrix {
            for x in row {
                bytes.extend(x.to_le_bytes());
            }
        }
        self.write_atomic(&format!("{key}.emb"), &bytes)?;
        let mut meta = self.read_meta();
        meta.insert(
            key.to_string(),
            CacheMeta {
                embedder_id: embedder_id.to_string(),
                rows: matrix.len(),
                dims,
                chunk_spans: chunks.iter().map(|c| c.char_span).collect(),
                content_hashes: chunks.iter().map(|c| sha_hex(c.text.as_bytes())).collect(),
            },
        );
        let json = serde_json::to_vec_pretty(&meta).expect("meta serializes");
        self.write_atomic("meta.json", &json)
    }
}

/// Embeds every chunk, reading and filling the cache when one is given.
pub fn embed_chunks(
    mode: ExecMode,
    embedder: &dyn Embedder,
    chunks: &[Chunk],
    cache: Option<&EmbeddingCache>,
) -> Result<Vec<Vec<f32>>, FallbackError> {
    let id = embedder.id();
    let key = EmbeddingCache::key(&id, chunks);
    if let Some(hit) = cache.and_then(|c| c.load(&key)) {
        if hit.len() == chunks.len() {
            return Ok(hit);
        }
    }
    let matrix = exec::map(mode, chunks, |c| embedder.embed(&c.text));
    if let Some(c) = cache {
        c.store(&key, &id, chunks, &matrix)?;
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fallback::chunk_context;

    #[test]
    fn deterministic_and_normalized() {
        let e = HashEmbedder::new(7);
        let a = e.embed("The quick brown fox");
        assert_eq!(a.len(), 64);
        assert_eq!(a, e.embed("the QUICK brown fox!"));
        let n: f32 = a.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert!(e.embed("  ").iter().all(|x| *x == 0.0));
        assert_ne!(a, HashEmbedder::new(8).embed("The quick brown fox"));
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = EmbeddingCache::new(dir.path());
        let chunks = chunk_context("alpha beta gamma delta epsilon zeta", 10);
        let e = HashEmbedder::new(1);
        let cold = embed_chunks(ExecMode::Sequential, &e, &chunks, Some(&cache)).unwrap();
        let key = EmbeddingCache::key(&e.id(), &chunks);
        assert!(dir.path().join(format!("{key}.emb")).exists());
        let meta = cache.read_meta();
        assert_eq!(meta[&key].rows, chunks.len());
        assert_eq!(cache.load(&key).unwrap(), cold);
        let warm = embed_chunks(ExecMode::Parallel, &e, &chunks, Some(&cache)).unwrap();
        assert_eq!(cold, warm);
    }
}
