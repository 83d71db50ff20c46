//! Per-utterance feature cache files.
//!
//! Layout (little-endian): `b"MFCC"`, u32 version, u32 frames, u32 dim,
//! u32 config digest, `frames * dim` f32 row-major, u16 id length, UTF-8 id.

use std::fs;
use std::path::{Path, PathBuf};

use super::{FeatureError, FeatureMatrix};

pub const CACHE_MAGIC: &[u8; 4] = b"MFCC";
pub const CACHE_VERSION: u32 = 1;

/// `<dir>/<id>.mfcc`, with bytes outside `[A-Za-z0-9._-]` percent-encoded.
pub fn cache_path(dir: impl AsRef<Path>, utterance_id: &str) -> PathBuf {
    let mut name = String::with_capacity(utterance_id.len() + 5);
    for b in utterance_id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-') {
            name.push(b as char);
        } else {
            name.push_str(&format!("%{b:02X}"));
        }
    }
    name.push_str(".mfcc");
    dir.as_ref().join(name)
}

fn encode(features: &FeatureMatrix) -> Vec<u8> {
    let id = features.utterance_id().as_bytes();
    let mut out = Vec::with_capacity(20 + features.frames().len() * 4 + 2 + id.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.n_frames() as u32).to_le_bytes());
    out.extend_from_slice(&(features.dim() as u32).to_le_bytes());
    out.extend_from_slice(&features.config_digest().to_le_bytes());
    for v in features.frames() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(id.len() as u16).to_le_bytes());
    out.extend_from_slice(id);
    out
}

/// Write atomically (temporary file, then rename).
pub fn write_feature_cache(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let path = path.as_ref();
    let io = |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    };
    if features.utterance_id().len() > u16::MAX as usize {
        return Err(FeatureError::InvalidConfig(
            "utterance id longer than 65535 bytes".into(),
        ));
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(features)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Read a cache file. With `expected_digest`, a file written under a
/// different MFCC configuration is reported as stale.
pub fn read_feature_cache(path: impl AsRef<Path>, expected_digest: Option<u32>) -> Result<FeatureMatrix, FeatureError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let format = |reason: &str| FeatureError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let corrupt = |reason: String| FeatureError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };

    if bytes.len() < 4 || &bytes[..4] != CACHE_MAGIC {
        return Err(format("bad magic"));
    }
    let mut cur = Cursor { bytes: &bytes, pos: 4 };
    let version = cur.u32().ok_or_else(|| corrupt("truncated header".into()))?;
    if version != CACHE_VERSION {
        return Err(format(&format!("unsupported version {version}")));
    }
    let header = (cur.u32(), cur.u32(), cur.u32());
    let (Some(n_frames), Some(dim), Some(digest)) = header else {
        return Err(corrupt("truncated header".into()));
    };
    if let Some(expected) = expected_digest {
        if expected != digest {
            return Err(FeatureError::Stale {
                path: path.to_path_buf(),
                expected,
                found: digest,
            });
        }
    }
    let count = (n_frames as usize)
        .checked_mul(dim as usize)
        .ok_or_else(|| corrupt("dimension overflow".into()))?;
    let body = count
        .checked_mul(4)
        .and_then(|n| cur.take(n))
        .ok_or_else(|| corrupt(format!("expected {n_frames}x{dim} frame data")))?;
    let frames: Vec<f32> = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let id_len = cur
        .take(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .ok_or_else(|| corrupt("missing id".into()))?;
    let id = cur.take(id_len).ok_or_else(|| corrupt("truncated id".into()))?;
    let id = std::str::from_utf8(id).map_err(|e| corrupt(e.to_string()))?;
    if cur.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    FeatureMatrix::new(id, n_frames as usize, dim as usize, frames, digest).map_err(|e| corrupt(e.to_string()))
}
