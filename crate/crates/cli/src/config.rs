//! Experiment configuration: a plain-text file of `key = value` lines with
//! flat dotted keys, overridable by `--key=value` flags.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths in a
//! config file are resolved against the file's directory; relative paths
//! given as flags are resolved against the working directory.

use std::collections::HashSet;
use std::fmt::Write;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use speechground::corpus::{Register, SpeakerRole};
use speechground::encoder::EncoderConfig;
use speechground::features::{MfccConfig, CANONICAL_RATE_HZ};
use speechground::training::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("{origin}: line {line}: expected `key = value`")]
    Syntax { origin: String, line: usize },
    #[error("{key}: invalid value {value:?}: {reason}")]
    Value { key: String, value: String, reason: String },
    #[error("{key} is set twice ({origin}: line {line})")]
    Duplicate { key: String, origin: String, line: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Ingestion settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSettings {
    pub keep_role: SpeakerRole,
    pub balance: bool,
    pub balance_seed: u64,
    pub split_seed: u64,
    pub n_validation: usize,
    pub n_test: usize,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            keep_role: SpeakerRole::Caregiver,
            balance: true,
            balance_seed: 0,
            split_seed: 0,
            n_validation: 1000,
            n_test: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Raw corpus manifests; each record carries its own register.
    pub manifests: Vec<PathBuf>,
    /// Base directory for relative `audio_path` entries.
    pub audio_root: PathBuf,
    /// Target sentence embeddings covering every utterance id.
    pub embeddings: Option<PathBuf>,
    /// Feature cache directory, relative to the output directory.
    pub feature_cache: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub corpus: CorpusSettings,
    pub mfcc: MfccConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub registers: Vec<Register>,
    /// Last epoch plotted by `trajectory`; all epochs when unset.
    pub trajectory_max_epoch: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            manifests: Vec::new(),
            audio_root: PathBuf::from("."),
            embeddings: None,
            feature_cache: PathBuf::from("features"),
            out_dir: None,
            corpus: CorpusSettings::default(),
            mfcc: MfccConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![1, 2, 3],
            registers: Register::ALL.to_vec(),
            trajectory_max_epoch: None,
        }
    }
}

/// Every accepted key, in the order [`ExperimentConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "paths.manifests",
    "paths.audio_root",
    "paths.embeddings",
    "paths.feature_cache",
    "paths.out_dir",
    "corpus.keep_role",
    "corpus.balance",
    "corpus.balance_seed",
    "corpus.split_seed",
    "corpus.n_validation",
    "corpus.n_test",
    "mfcc.window_ms",
    "mfcc.hop_ms",
    "mfcc.n_fft",
    "mfcc.n_mels",
    "mfcc.n_ceps",
    "mfcc.preemphasis",
    "mfcc.with_deltas",
    "mfcc.log_floor",
    "mfcc.cmvn",
    "encoder.input_dim",
    "encoder.conv_channels",
    "encoder.conv_kernel",
    "encoder.conv_stride",
    "encoder.gru_hidden",
    "encoder.gru_layers",
    "encoder.attention_dim",
    "encoder.embed_dim",
    "train.epochs",
    "train.batch_size",
    "train.margin",
    "train.beta1",
    "train.beta2",
    "train.adam_eps",
    "train.lr_min",
    "train.lr_max",
    "train.cycle_epochs",
    "seeds",
    "registers",
    "trajectory.max_epoch",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let p = PathBuf::from(value);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn join_display<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parse config text; `base` anchors relative paths.
    pub fn from_text(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig {
            audio_root: base.to_path_buf(),
            ..ExperimentConfig::default()
        };
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                origin: origin.to_string(),
                line: i + 1,
            })?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    key: key.to_string(),
                    origin: origin.to_string(),
                    line: i + 1,
                });
            }
            cfg.set(key, value.trim(), base)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_text(&text, &path.display().to_string(), base)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), ConfigError> {
        let v = value;
        match key {
            "paths.manifests" => {
                self.manifests = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| resolve(base, s))
                    .collect()
            }
            "paths.audio_root" => self.audio_root = resolve(base, v),
            "paths.embeddings" => self.embeddings = Some(resolve(base, v)),
            "paths.feature_cache" => self.feature_cache = PathBuf::from(v),
            "paths.out_dir" => self.out_dir = Some(resolve(base, v)),
            "corpus.keep_role" => self.corpus.keep_role = parse(key, v)?,
            "corpus.balance" => self.corpus.balance = parse(key, v)?,
            "corpus.balance_seed" => self.corpus.balance_seed = parse(key, v)?,
            "corpus.split_seed" => self.corpus.split_seed = parse(key, v)?,
            "corpus.n_validation" => self.corpus.n_validation = parse(key, v)?,
            "corpus.n_test" => self.corpus.n_test = parse(key, v)?,
            "mfcc.window_ms" => self.mfcc.window_ms = parse(key, v)?,
            "mfcc.hop_ms" => self.mfcc.hop_ms = parse(key, v)?,
            "mfcc.n_fft" => self.mfcc.n_fft = parse(key, v)?,
            "mfcc.n_mels" => self.mfcc.n_mels = parse(key, v)?,
            "mfcc.n_ceps" => self.mfcc.n_ceps = parse(key, v)?,
            "mfcc.preemphasis" => self.mfcc.preemphasis = parse(key, v)?,
            "mfcc.with_deltas" => self.mfcc.with_deltas = parse(key, v)?,
            "mfcc.log_floor" => self.mfcc.log_floor = parse(key, v)?,
            "mfcc.cmvn" => self.mfcc.cmvn = parse(key, v)?,
            "encoder.input_dim" => self.encoder.input_dim = parse(key, v)?,
            "encoder.conv_channels" => self.encoder.conv_channels = parse(key, v)?,
            "encoder.conv_kernel" => self.encoder.conv_kernel = parse(key, v)?,
            "encoder.conv_stride" => self.encoder.conv_stride = parse(key, v)?,
            "encoder.gru_hidden" => self.encoder.gru_hidden = parse(key, v)?,
            "encoder.gru_layers" => self.encoder.gru_layers = parse(key, v)?,
            "encoder.attention_dim" => self.encoder.attention_dim = parse(key, v)?,
            "encoder.embed_dim" => self.encoder.embed_dim = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.margin" => self.train.margin = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.adam_eps" => self.train.adam_eps = parse(key, v)?,
            "train.lr_min" => self.train.lr_min = parse(key, v)?,
            "train.lr_max" => self.train.lr_max = parse(key, v)?,
            "train.cycle_epochs" => self.train.cycle_epochs = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "registers" => self.registers = parse_list(key, v)?,
            "trajectory.max_epoch" => self.trajectory_max_epoch = Some(parse(key, v)?),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Checks that need no file access.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.mfcc
            .validate(CANONICAL_RATE_HZ)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.encoder
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.encoder.input_dim != self.mfcc.feature_dim() {
            return invalid(format!(
                "encoder.input_dim = {} but the MFCC settings produce {} features per frame",
                self.encoder.input_dim,
                self.mfcc.feature_dim()
            ));
        }
        if self.seeds.is_empty() {
            return invalid("seeds must list at least one seed".into());
        }
        if self.seeds.iter().collect::<HashSet<_>>().len() != self.seeds.len() {
            return invalid(format!("seeds contains duplicates: {}", join_display(&self.seeds)));
        }
        if self.registers.is_empty() {
            return invalid("registers must list at least one register".into());
        }
        if self.registers.iter().collect::<HashSet<_>>().len() != self.registers.len() {
            return invalid("registers contains duplicates".into());
        }
        let cache = &self.feature_cache;
        if cache.is_absolute() || cache.components().any(|c| !matches!(c, Component::Normal(_))) {
            return invalid(format!(
                "paths.feature_cache must be a plain relative directory inside the output directory, got {}",
                cache.display()
            ));
        }
        if self.trajectory_max_epoch == Some(0) {
            return invalid("trajectory.max_epoch must be at least 1".into());
        }
        Ok(())
    }

    /// Render every key in config-file syntax with absolute paths.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        let path = |p: &Path| p.display().to_string();
        put(
            "paths.manifests",
            self.manifests.iter().map(|p| path(p)).collect::<Vec<_>>().join(", "),
        );
        put("paths.audio_root", path(&self.audio_root));
        if let Some(p) = &self.embeddings {
            put("paths.embeddings", path(p));
        }
        put("paths.feature_cache", path(&self.feature_cache));
        if let Some(p) = &self.out_dir {
            put("paths.out_dir", path(p));
        }
        let c = &self.corpus;
        put("corpus.keep_role", format!("{:?}", c.keep_role).to_lowercase());
        put("corpus.balance", c.balance.to_string());
        put("corpus.balance_seed", c.balance_seed.to_string());
        put("corpus.split_seed", c.split_seed.to_string());
        put("corpus.n_validation", c.n_validation.to_string());
        put("corpus.n_test", c.n_test.to_string());
        let m = &self.mfcc;
        put("mfcc.window_ms", m.window_ms.to_string());
        put("mfcc.hop_ms", m.hop_ms.to_string());
        put("mfcc.n_fft", m.n_fft.to_string());
        put("mfcc.n_mels", m.n_mels.to_string());
        put("mfcc.n_ceps", m.n_ceps.to_string());
        put("mfcc.preemphasis", m.preemphasis.to_string());
        put("mfcc.with_deltas", m.with_deltas.to_string());
        put("mfcc.log_floor", m.log_floor.to_string());
        put("mfcc.cmvn", m.cmvn.to_string());
        let e = &self.encoder;
        put("encoder.input_dim", e.input_dim.to_string());
        put("encoder.conv_channels", e.conv_channels.to_string());
        put("encoder.conv_kernel", e.conv_kernel.to_string());
        put("encoder.conv_stride", e.conv_stride.to_string());
        put("encoder.gru_hidden", e.gru_hidden.to_string());
        put("encoder.gru_layers", e.gru_layers.to_string());
        put("encoder.attention_dim", e.attention_dim.to_string());
        put("encoder.embed_dim", e.embed_dim.to_string());
        let t = &self.train;
        put("train.epochs", t.epochs.to_string());
        put("train.batch_size", t.batch_size.to_string());
        put("train.margin", t.margin.to_string());
        put("train.beta1", t.beta1.to_string());
        put("train.beta2", t.beta2.to_string());
        put("train.adam_eps", t.adam_eps.to_string());
        put("train.lr_min", t.lr_min.to_string());
        put("train.lr_max", t.lr_max.to_string());
        put("train.cycle_epochs", t.cycle_epochs.to_string());
        put("seeds", join_display(&self.seeds));
        put("registers", join_display(&self.registers));
        if let Some(n) = self.trajectory_max_epoch {
            put("trajectory.max_epoch", n.to_string());
        }
        out
    }

    /// Encoder settings for the run seeded with `seed`.
    pub fn encoder_for_seed(&self, seed: u64) -> EncoderConfig {
        EncoderConfig {
            init_seed: seed,
            ..self.encoder
        }
    }

    /// Training settings for the run seeded with `seed`, writing checkpoints
    /// to `run_dir`.
    pub fn train_for_seed(&self, seed: u64, run_dir: PathBuf) -> TrainConfig {
        TrainConfig {
            seed,
            checkpoint_dir: Some(run_dir),
            ..self.train.clone()
        }
    }
}
