//! Embedding cache files.
//!
//! Layout (little-endian):
//! - magic `TFAE`
//! - version: u32
//! - timesteps: u32
//! - width: u32
//! - timesteps * width f32 values, row-major

use std::fs;
use std::path::{Path, PathBuf};

use super::{EmbeddingSequence, FeatureError};
use crate::dataset::Identity;

pub const CACHE_MAGIC: [u8; 4] = *b"TFAE";
pub const CACHE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// `<speaker>__<word>__<take>.emb`
pub fn cache_file_name(identity: &Identity) -> String {
    format!("{}__{}__{}.emb", identity.speaker, identity.word, identity.take)
}

pub fn cache_path(dir: &Path, identity: &Identity) -> PathBuf {
    dir.join(cache_file_name(identity))
}

pub fn encode(seq: &EmbeddingSequence) -> Result<Vec<u8>, FeatureError> {
    seq.check()?;
    let dim = |n: usize| {
        u32::try_from(n).map_err(|_| FeatureError::Shape(format!("dimension {n} exceeds u32")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + seq.values.len() * 4);
    out.extend_from_slice(&CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(seq.timesteps)?.to_le_bytes());
    out.extend_from_slice(&dim(seq.width)?.to_le_bytes());
    for v in &seq.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a cache payload. `tag` becomes the sequence's extractor tag.
pub fn decode(bytes: &[u8], identity: Identity, tag: &str) -> Result<EmbeddingSequence, FeatureError> {
    if bytes.len() < HEADER_LEN {
        return Err(FeatureError::Truncated { expected: HEADER_LEN, actual: bytes.len() });
    }
    if bytes[..4] != CACHE_MAGIC {
        return Err(FeatureError::BadMagic { expected: CACHE_MAGIC, found: bytes[..4].try_into().unwrap() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != CACHE_VERSION {
        return Err(FeatureError::Version { expected: CACHE_VERSION, found: version });
    }
    let timesteps = word(8) as usize;
    let width = word(12) as usize;
    let expected = timesteps
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| FeatureError::Shape(format!("{timesteps}x{width} overflows")))?;
    if bytes.len() != expected {
        return Err(FeatureError::Truncated { expected, actual: bytes.len() });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let seq = EmbeddingSequence { identity, timesteps, width, values, extractor_tag: tag.to_string() };
    seq.check()?;
    Ok(seq)
}

pub fn cache_write(path: impl AsRef<Path>, seq: &EmbeddingSequence) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let bytes = encode(seq)?;
    fs::write(path, bytes).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })
}

pub fn cache_read(path: impl AsRef<Path>, identity: Identity) -> Result<EmbeddingSequence, FeatureError> {
    let path = path.as_ref();
    let bytes =
        fs::read(path).map_err(|source| FeatureError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes, identity, &format!("cache:{}", path.display()))
}

/// Reads a cache file and checks it against the configured shape.
pub fn cache_read_checked(
    path: impl AsRef<Path>,
    identity: Identity,
    timesteps: usize,
    width: usize,
) -> Result<EmbeddingSequence, FeatureError> {
    let seq = cache_read(path, identity)?;
    if seq.timesteps != timesteps || seq.width != width {
        return Err(FeatureError::Shape(format!(
            "cache entry for {} is {}x{}, configuration expects {timesteps}x{width}",
            seq.identity, seq.timesteps, seq.width
        )));
    }
    Ok(seq)
}
