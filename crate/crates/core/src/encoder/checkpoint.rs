//! Checkpoint files.
//!
//! Layout (little-endian): `b"SGCK"`, u32 version, the configuration as
//! eight u32 fields in declaration order followed by a u64 `init_seed`,
//! u32 parameter count, then per parameter: u16 name length, UTF-8 name,
//! u32 rank, rank × u32 dims, f32 data. The file ends with a u64 training
//! step and a u64-length-prefixed opaque optimizer blob.

use std::fs;
use std::path::Path;

use super::{EncoderConfig, EncoderError, SpeechEncoder};
use crate::autograd::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub encoder: SpeechEncoder<f32>,
    pub step: u64,
    pub optimizer: Vec<u8>,
}

fn config_fields(cfg: &EncoderConfig) -> [usize; 8] {
    [
        cfg.input_dim,
        cfg.conv_channels,
        cfg.conv_kernel,
        cfg.conv_stride,
        cfg.gru_hidden,
        cfg.gru_layers,
        cfg.embed_dim,
        cfg.attention_dim,
    ]
}

pub(crate) fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = ck.encoder.config();
    for v in config_fields(cfg) {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.init_seed.to_le_bytes());
    out.extend_from_slice(&(ck.encoder.params().len() as u32).to_le_bytes());
    for (name, t) in ck.encoder.params() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&ck.step.to_le_bytes());
    out.extend_from_slice(&(ck.optimizer.len() as u64).to_le_bytes());
    out.extend_from_slice(&ck.optimizer);
    out
}

/// Write atomically (temporary file, then rename).
pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<(), EncoderError> {
    let path = path.as_ref();
    let io = |source| EncoderError::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ck)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub(crate) fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint, EncoderError> {
    let format = |reason: String| EncoderError::Format {
        path: path.to_path_buf(),
        reason,
    };
    let corrupt = |reason: &str| EncoderError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format("bad magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32().ok_or_else(|| corrupt("truncated header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(format(format!("unsupported version {version}")));
    }
    let mut fields = [0usize; 8];
    for f in &mut fields {
        *f = r.u32().ok_or_else(|| corrupt("truncated configuration"))? as usize;
    }
    let config = EncoderConfig {
        input_dim: fields[0],
        conv_channels: fields[1],
        conv_kernel: fields[2],
        conv_stride: fields[3],
        gru_hidden: fields[4],
        gru_layers: fields[5],
        embed_dim: fields[6],
        attention_dim: fields[7],
        init_seed: r.u64().ok_or_else(|| corrupt("truncated configuration"))?,
    };
    let n_params = r.u32().ok_or_else(|| corrupt("truncated parameter count"))?;
    let mut params = Vec::new();
    for _ in 0..n_params {
        let len = r.u16().ok_or_else(|| corrupt("truncated parameter name"))? as usize;
        let name = r.take(len).ok_or_else(|| corrupt("truncated parameter name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt("parameter name is not UTF-8"))?;
        let rank = r.u32().ok_or_else(|| corrupt("truncated rank"))? as usize;
        let mut shape = Vec::new();
        for _ in 0..rank {
            shape.push(r.u32().ok_or_else(|| corrupt("truncated dims"))? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("dimension overflow"))?;
        let body = numel
            .checked_mul(4)
            .and_then(|n| r.take(n))
            .ok_or_else(|| corrupt("truncated parameter data"))?;
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| corrupt(&e.to_string()))?;
        params.push((name, tensor));
    }
    let step = r.u64().ok_or_else(|| corrupt("missing step counter"))?;
    let blob_len = r.u64().ok_or_else(|| corrupt("missing optimizer state"))?;
    let optimizer = usize::try_from(blob_len)
        .ok()
        .and_then(|n| r.take(n))
        .ok_or_else(|| corrupt("truncated optimizer state"))?
        .to_vec();
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes"));
    }
    let encoder = SpeechEncoder::from_params(config, params)?;
    Ok(Checkpoint {
        encoder,
        step,
        optimizer,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, EncoderError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EncoderError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(path, &bytes)
}
