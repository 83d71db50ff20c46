//! Contrastive training: bidirectional margin loss over within-batch
//! negatives, Adam with a triangular cyclic learning rate, per-epoch
//! validation, checkpoints and best-epoch selection.
//!
//! Batches are drawn from a permutation of the training set derived from
//! `seed` and the (1-based) epoch number, so an epoch's batches do not depend
//! on how the run got there and a resumed run repeats an uninterrupted one
//! exactly. A trailing batch of one item has no negatives and is merged into
//! the batch before it.

mod adam;
mod loss;
mod state;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use loss::{lr_at_step, margin_loss};
pub use state::TrainState;
pub use trainer::{
    batches_for_epoch, Dataset, EpochSummary, FitReport, RetrievalValidator, Trainer, ValidationMetrics, Validator,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::autograd::GradError;
use crate::embeddings::EmbeddingError;
use crate::encoder::EncoderError;
use crate::features::FeatureError;
use crate::retrieval::RetrievalError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("{} of {total} utterances have no {kind}: {}", .ids.len(), .ids.iter().take(10).cloned().collect::<Vec<_>>().join(", "))]
    MissingData {
        kind: &'static str,
        ids: Vec<String>,
        total: usize,
    },
    #[error("target embedding of {0:?} is zero")]
    ZeroTarget(String),
    #[error("{what}: found {found}, encoder expects {expected}")]
    DimMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("training state: {0}")]
    State(String),
    #[error(transparent)]
    Graph(#[from] GradError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_epochs: usize,
    pub seed: u64,
    /// Where `epoch_<n>.sgck`, `best.sgck` and `trajectory.csv` go; nothing
    /// is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            margin: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_min: 1e-6,
            lr_max: 2e-4,
            cycle_epochs: 4,
            seed: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs < 1 {
            return bad(format!("epochs must be at least 1, got {}", self.epochs));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 <= lr_min < lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive".into());
        }
        if self.cycle_epochs < 1 {
            return bad("cycle_epochs must be at least 1".into());
        }
        Ok(())
    }
}

/// One row of the trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr_end: f64,
    pub val_recall1: f64,
    pub val_recall5: f64,
    pub val_recall10: f64,
    pub val_median_rank: f64,
}

pub const TRAJECTORY_HEADER: [&str; 7] = [
    "epoch",
    "mean_loss",
    "lr_end",
    "val_recall1",
    "val_recall5",
    "val_recall10",
    "val_median_rank",
];

impl EpochRecord {
    /// Fields in [`TRAJECTORY_HEADER`] order; floats use the shortest
    /// representation that parses back to the same value.
    pub fn csv_fields(&self) -> Vec<String> {
        let mut out = vec![self.epoch.to_string()];
        out.extend(
            [
                self.mean_loss,
                self.lr_end,
                self.val_recall1,
                self.val_recall5,
                self.val_recall10,
                self.val_median_rank,
            ]
            .iter()
            .map(f64::to_string),
        );
        out
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> TrainError + '_ {
    move |source| TrainError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_trajectory(path: impl AsRef<Path>, log: &[EpochRecord]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TRAJECTORY_HEADER).map_err(csv_err(path))?;
    for r in log {
        w.write_record(r.csv_fields()).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>, TrainError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(TrainError::State(format!(
            "{}: expected trajectory header {}",
            path.display(),
            TRAJECTORY_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let bad = || TrainError::State(format!("{}: malformed row {}", path.display(), line + 2));
        let f = |i: usize| row.get(i).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad);
        out.push(EpochRecord {
            epoch: row.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            mean_loss: f(1)?,
            lr_end: f(2)?,
            val_recall1: f(3)?,
            val_recall5: f(4)?,
            val_recall10: f(5)?,
            val_median_rank: f(6)?,
        });
    }
    Ok(out)
}
