//! Audio loading and MFCC feature extraction.
//!
//! The pipeline is pre-emphasis, Hamming-windowed framing, magnitude
//! spectrum, HTK-mel triangular filterbank, floored natural log, orthonormal
//! DCT-II and optional regression deltas. Everything runs in `f64`; the
//! stored [`FeatureMatrix`] is `f32`, matching the cache format.

mod audio;
mod cache;
mod deltas;
mod mfcc;
mod resample;

pub use audio::{load_audio, probe_wav, write_wav, AudioBuffer, WavInfo, CANONICAL_RATE_HZ};
pub use cache::{cache_path, read_feature_cache, write_feature_cache, CACHE_MAGIC, CACHE_VERSION};
pub use deltas::append_deltas;
pub use mfcc::{apply_cmvn, hz_to_mel, mel_to_hz, mfcc, FeatureMatrix, Mfcc, MfccConfig};
pub use resample::resample;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported or unreadable audio: {message}")]
    Audio { path: PathBuf, message: String },
    #[error("audio buffer is empty")]
    EmptyAudio,
    #[error("audio contains non-finite samples")]
    NonFiniteAudio,
    #[error("invalid sample rate {0}")]
    InvalidSampleRate(u32),
    #[error("invalid MFCC configuration: {0}")]
    InvalidConfig(String),
    #[error("audio of {samples} samples is shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("{path}: not a feature cache ({reason})")]
    Format { path: PathBuf, reason: String },
    #[error("{path}: corrupt feature cache ({reason})")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: stale feature cache (digest {found:#010x}, expected {expected:#010x})")]
    Stale { path: PathBuf, expected: u32, found: u32 },
}
