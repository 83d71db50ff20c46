//! Cosine retrieval of target embeddings from speech encodings, the
//! recall@k / median-rank metrics, cross-register evaluation and
//! learning-trajectory summaries.
//!
//! Ranks are 1-based and pessimistic: a candidate whose similarity equals
//! that of the true item is counted ahead of it, which makes every rank
//! independent of candidate order. The candidate pool of an evaluation is
//! exactly the targets of the utterances being evaluated.

mod cross;
mod rank;
mod trajectory;

pub use cross::{evaluate_cross_register, CrossRegisterMatrix, SeedModels, TestSet};
pub use rank::{median_rank, rank_candidates, recall_at, CandidatePool, RankingReport};
pub use trajectory::{render_trajectory_svg, trajectory_report, write_trajectory_curves, TrajectoryCurve};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::embeddings::{EmbeddingError, EmbeddingSet};
use crate::encoder::{EncoderError, SpeechEncoder};
use crate::features::FeatureMatrix;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("candidate {index} has zero norm")]
    ZeroNorm { index: usize },
    #[error("query has zero norm")]
    ZeroQuery,
    #[error("vector has {found} values, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("true index {index} is outside a pool of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("test sets share {} ids, e.g. {:?}", .0.len(), .0.first())]
    OverlappingTestSets(Vec<String>),
    #[error("trajectory logs disagree on epochs: {0}")]
    EpochMismatch(String),
    #[error("no runs to summarise")]
    NoRuns,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
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

/// Encode every utterance, spreading the work over the available cores.
/// The result does not depend on the number of threads.
pub fn encode_all(encoder: &SpeechEncoder<f32>, items: &[FeatureMatrix]) -> Result<Vec<Vec<f32>>, EncoderError> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|fm| encoder.encode(fm)).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("encoder thread panicked")?);
        }
        Ok(out)
    })
}

/// Ranks of each query's own target among the targets of `ids`.
pub fn rank_encodings(
    encodings: &[Vec<f32>],
    ids: &[&str],
    targets: &EmbeddingSet,
) -> Result<Vec<usize>, RetrievalError> {
    let pool = CandidatePool::new(targets.dim(), &targets.gather(ids.iter().copied())?)?;
    encodings.iter().enumerate().map(|(i, q)| pool.rank(q, i)).collect()
}

/// Encode `test`, rank against the test set's own targets and summarise.
pub fn evaluate(
    encoder: &SpeechEncoder<f32>,
    test: &[FeatureMatrix],
    targets: &EmbeddingSet,
    name: &str,
) -> Result<RankingReport, RetrievalError> {
    let ids: Vec<&str> = test.iter().map(FeatureMatrix::utterance_id).collect();
    targets.check_coverage(ids.iter().copied())?;
    if test.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let encodings = encode_all(encoder, test)?;
    let ranks = rank_encodings(&encodings, &ids, targets)?;
    Ok(RankingReport::from_ranks(name, ids.len(), &ranks))
}

/// CSV with one row per report: `test_set,n,recall1,recall5,recall10,median_rank`.
pub fn write_reports_csv(path: impl AsRef<Path>, reports: &[RankingReport]) -> Result<(), RetrievalError> {
    let path = path.as_ref();
    let err = |source| RetrievalError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["test_set", "n", "recall1", "recall5", "recall10", "median_rank"])
        .map_err(err)?;
    for r in reports {
        w.write_record([
            r.test_set.clone(),
            r.n_candidates.to_string(),
            format!("{:.6}", r.recall1),
            format!("{:.6}", r.recall5),
            format!("{:.6}", r.recall10),
            format!("{:.6}", r.median_rank),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
