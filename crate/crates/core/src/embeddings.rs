//! Target sentence-embedding files.
//!
//! Layout (little-endian): `b"SEMB"`, u32 version, u32 dim, u32 count, then
//! `count` records of u16 id length, UTF-8 id, `dim` f32 values. Vectors are
//! stored as produced; consumers compare by cosine, so scale is irrelevant.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"SEMB";
pub const EMBEDDING_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not an embedding file ({reason})")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: corrupt embedding file ({reason})")]
    Corrupt { path: PathBuf, reason: String },
    #[error("duplicate embedding id {0:?}")]
    DuplicateId(String),
    #[error("embedding {0:?} has non-finite values")]
    NonFinite(String),
    #[error("embedding {id:?} has {found} values, expected {expected}")]
    DimMismatch { id: String, expected: usize, found: usize },
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("{} of {total} ids have no embedding: {}", .missing.len(), preview(.missing))]
    MissingIds { missing: Vec<String>, total: usize },
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", ... ({} more)", ids.len() - SHOWN));
    }
    s
}

/// An ordered, id-indexed collection of fixed-dimension vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    ids: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Result<Self, EmbeddingError> {
        if dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        Ok(EmbeddingSet {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn push(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<(), EmbeddingError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                id,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(EmbeddingError::NonFinite(id));
        }
        if id.len() > u16::MAX as usize {
            return Err(EmbeddingError::IdTooLong(id));
        }
        if self.index.contains_key(&id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(vector);
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

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .map(String::as_str)
            .zip(self.values.chunks_exact(self.dim))
    }

    /// Error listing every id in `ids` without a vector.
    pub fn check_coverage<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<(), EmbeddingError> {
        let mut total = 0;
        let missing: Vec<String> = ids
            .into_iter()
            .inspect(|_| total += 1)
            .filter(|id| !self.index.contains_key(*id))
            .map(str::to_string)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(EmbeddingError::MissingIds { missing, total })
        }
    }

    /// Vectors for `ids` in that order, as one row-major block.
    pub fn gather<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Vec<f32>, EmbeddingError> {
        let ids: Vec<&str> = ids.into_iter().collect();
        self.check_coverage(ids.iter().copied())?;
        Ok(ids
            .iter()
            .flat_map(|id| self.get(id).unwrap().iter().copied())
            .collect())
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, v) in self.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }
}

/// Write atomically (temporary file, then rename).
pub fn write_embeddings(path: impl AsRef<Path>, set: &EmbeddingSet) -> Result<(), EmbeddingError> {
    let path = path.as_ref();
    let io = |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, set.encode()).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Dimension and record count from the header alone.
pub fn read_embedding_header(path: impl AsRef<Path>) -> Result<(usize, usize), EmbeddingError> {
    use std::io::Read;
    let path = path.as_ref();
    let mut head = [0u8; 16];
    let mut file = fs::File::open(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let n = file.read(&mut head).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_header(path, &head[..n])
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(usize, usize), EmbeddingError> {
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if bytes.len() < 4 || &bytes[..4] != EMBEDDING_MAGIC {
        return Err(EmbeddingError::Format {
            path: path.to_path_buf(),
            reason: "bad magic".into(),
        });
    }
    if bytes.len() < 16 {
        return Err(EmbeddingError::Corrupt {
            path: path.to_path_buf(),
            reason: "truncated header".into(),
        });
    }
    if word(4) != EMBEDDING_VERSION {
        return Err(EmbeddingError::Format {
            path: path.to_path_buf(),
            reason: format!("unsupported version {}", word(4)),
        });
    }
    if word(8) == 0 {
        return Err(EmbeddingError::Format {
            path: path.to_path_buf(),
            reason: "zero dimension".into(),
        });
    }
    Ok((word(8) as usize, word(12) as usize))
}

/// Read and validate a whole file: record count, unique ids, finite values.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet, EmbeddingError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (dim, count) = parse_header(path, &bytes)?;
    let corrupt = |reason: String| EmbeddingError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let mut set = EmbeddingSet::new(dim)?;
    let mut pos = 16;
    let mut vector = vec![0f32; dim];
    for record in 0..count {
        let truncated = || corrupt(format!("truncated record {record} of {count}"));
        let len_bytes = bytes.get(pos..pos + 2).ok_or_else(truncated)?;
        let id_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
        pos += 2;
        let id = bytes.get(pos..pos + id_len).ok_or_else(truncated)?;
        let id = std::str::from_utf8(id).map_err(|e| corrupt(format!("record {record}: {e}")))?;
        pos += id_len;
        let body = bytes.get(pos..pos + 4 * dim).ok_or_else(truncated)?;
        for (v, b) in vector.iter_mut().zip(body.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().unwrap());
        }
        pos += 4 * dim;
        set.push(id, &vector)?;
    }
    if pos != bytes.len() {
        return Err(corrupt(format!("{} bytes after {count} records", bytes.len() - pos)));
    }
    Ok(set)
}
