use super::RetrievalError;

/// Candidate embeddings normalised once for repeated cosine ranking.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    dim: usize,
    unit: Vec<f64>,
}

fn unit(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|&x| x as f64 / norm).collect())
}

impl CandidatePool {
    /// `vectors` is row-major `[n, dim]`; every row must be nonzero.
    pub fn new(dim: usize, vectors: &[f32]) -> Result<Self, RetrievalError> {
        if dim == 0 || vectors.is_empty() || !vectors.len().is_multiple_of(dim) {
            return Err(RetrievalError::EmptyPool);
        }
        let mut out = Vec::with_capacity(vectors.len());
        for (index, row) in vectors.chunks_exact(dim).enumerate() {
            out.extend(unit(row).ok_or(RetrievalError::ZeroNorm { index })?);
        }
        Ok(CandidatePool { dim, unit: out })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, RetrievalError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(RetrievalError::DimMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        Self::new(dim, &rows.concat())
    }

    pub fn len(&self) -> usize {
        self.unit.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cosine similarity of `query` to every candidate.
    pub fn similarities(&self, query: &[f32]) -> Result<Vec<f64>, RetrievalError> {
        if query.len() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                found: query.len(),
            });
        }
        let q = unit(query).ok_or(RetrievalError::ZeroQuery)?;
        Ok(self
            .unit
            .chunks_exact(self.dim)
            .map(|c| c.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// 1-based rank of candidate `true_index` by descending similarity;
    /// candidates tied with it are counted ahead of it.
    pub fn rank(&self, query: &[f32], true_index: usize) -> Result<usize, RetrievalError> {
        if true_index >= self.len() {
            return Err(RetrievalError::IndexOutOfRange {
                index: true_index,
                len: self.len(),
            });
        }
        let sims = self.similarities(query)?;
        let target = sims[true_index];
        let ahead = sims
            .iter()
            .enumerate()
            .filter(|&(j, &s)| j != true_index && s >= target)
            .count();
        Ok(ahead + 1)
    }
}

/// Rank of `candidates[true_index]` for `query` under cosine similarity,
/// with pessimistic tie handling.
pub fn rank_candidates(query: &[f32], candidates: &[Vec<f32>], true_index: usize) -> Result<usize, RetrievalError> {
    CandidatePool::from_rows(candidates)?.rank(query, true_index)
}

/// Fraction of ranks no greater than `k`.
pub fn recall_at(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Median; the mean of the two central values for even lengths.
pub fn median_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return f64::NAN;
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingReport {
    pub test_set: String,
    pub n_candidates: usize,
    pub recall1: f64,
    pub recall5: f64,
    pub recall10: f64,
    pub median_rank: f64,
}

impl RankingReport {
    pub fn from_ranks(test_set: impl Into<String>, n_candidates: usize, ranks: &[usize]) -> Self {
        RankingReport {
            test_set: test_set.into(),
            n_candidates,
            recall1: recall_at(ranks, 1),
            recall5: recall_at(ranks, 5),
            recall10: recall_at(ranks, 10),
            median_rank: median_rank(ranks),
        }
    }

    /// Field-wise mean of several reports on the same test set.
    pub fn mean(reports: &[RankingReport]) -> Option<RankingReport> {
        let first = reports.first()?;
        let n = reports.len() as f64;
        let avg = |f: fn(&RankingReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(RankingReport {
            test_set: first.test_set.clone(),
            n_candidates: first.n_candidates,
            recall1: avg(|r| r.recall1),
            recall5: avg(|r| r.recall5),
            recall10: avg(|r| r.recall10),
            median_rank: avg(|r| r.median_rank),
        })
    }
}
