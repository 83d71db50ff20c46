//! Corpus ingestion: manifests, tokenisation, speaker filtering, register
//! balancing, seeded splits and descriptive statistics.
//!
//! Subsampling and splitting draw a permutation with
//! [`rand::seq::SliceRandom::shuffle`] (Fisher-Yates) driven by a
//! `ChaCha8Rng` seeded with `seed_from_u64(seed)`. Selected items keep their
//! manifest order, so split files diff cleanly against their source.

mod manifest;
mod split;
mod stats;
mod tokenize;

pub use manifest::{parse_manifest, read_manifest_str, write_manifest, write_split_manifests};
pub use split::{balance_registers, drop_unusable, filter_utterances, split_corpus, SplitSpec, Splits};
pub use stats::{compute_stats, render_stats_table, CorpusStats};
pub use tokenize::tokenize_transcript;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("{path}: line {line}: duplicate utterance id {id:?}")]
    DuplicateId { path: String, line: usize, id: String },
    #[error("split needs n_validation + n_test < corpus size ({n_validation} + {n_test} vs {size})")]
    InfeasibleSplit {
        n_validation: usize,
        n_test: usize,
        size: usize,
    },
    #[error("utterance {id:?} has non-positive duration and cannot enter a split")]
    NonPositiveDuration { id: String },
    #[error("cannot compute statistics of an empty corpus")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Register {
    Cds,
    Ads,
}

impl Register {
    pub const ALL: [Register; 2] = [Register::Cds, Register::Ads];

    pub fn as_str(self) -> &'static str {
        match self {
            Register::Cds => "cds",
            Register::Ads => "ads",
        }
    }
}

impl fmt::Display for Register {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Register {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cds" => Ok(Register::Cds),
            "ads" => Ok(Register::Ads),
            other => Err(format!("unknown register {other:?} (expected cds or ads)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeakerRole {
    Caregiver,
    Child,
    Experimenter,
    Multiple,
}

impl FromStr for SpeakerRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "caregiver" => Ok(SpeakerRole::Caregiver),
            "child" => Ok(SpeakerRole::Child),
            "experimenter" => Ok(SpeakerRole::Experimenter),
            "multiple" => Ok(SpeakerRole::Multiple),
            other => Err(format!("unknown speaker role {other:?}")),
        }
    }
}

/// One transcribed speech segment.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub register: Register,
    pub speaker_role: SpeakerRole,
    pub transcript: String,
    /// Always `tokenize_transcript(&transcript)`.
    pub tokens: Vec<String>,
    pub audio_path: String,
    pub duration_s: f64,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        register: Register,
        speaker_role: SpeakerRole,
        transcript: impl Into<String>,
        audio_path: impl Into<String>,
        duration_s: f64,
    ) -> Self {
        let transcript = transcript.into();
        Self {
            id: id.into(),
            register,
            speaker_role,
            tokens: tokenize_transcript(&transcript),
            transcript,
            audio_path: audio_path.into(),
            duration_s,
        }
    }
}
