use std::collections::HashSet;
use std::fmt::Write;

use serde::Serialize;

use super::{CorpusError, Utterance};

/// Register-level descriptive statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_utterances: usize,
    pub vocabulary_size: usize,
    pub total_words: usize,
    pub type_token_ratio: f64,
    pub words_per_utterance: f64,
    /// Mean utterance length in seconds.
    pub utterance_length_s: f64,
    /// Ratio of the two means above, not a mean of per-utterance rates.
    pub words_per_second: f64,
}

impl CorpusStats {
    /// Derive every ratio from raw counts.
    pub fn from_counts(vocabulary_size: usize, total_words: usize, n_utterances: usize, total_duration_s: f64) -> Self {
        let words_per_utterance = total_words as f64 / n_utterances as f64;
        let utterance_length_s = total_duration_s / n_utterances as f64;
        Self {
            n_utterances,
            vocabulary_size,
            total_words,
            type_token_ratio: vocabulary_size as f64 / total_words as f64,
            words_per_utterance,
            utterance_length_s,
            words_per_second: words_per_utterance / utterance_length_s,
        }
    }
}

pub fn compute_stats(utterances: &[Utterance]) -> Result<CorpusStats, CorpusError> {
    if utterances.is_empty() {
        return Err(CorpusError::Empty);
    }
    let vocab: HashSet<&str> = utterances
        .iter()
        .flat_map(|u| u.tokens.iter().map(String::as_str))
        .collect();
    let total_words = utterances.iter().map(|u| u.tokens.len()).sum();
    let duration = utterances.iter().map(|u| u.duration_s).sum();
    Ok(CorpusStats::from_counts(
        vocab.len(),
        total_words,
        utterances.len(),
        duration,
    ))
}

/// Plain-text table with one column per named corpus.
pub fn render_stats_table(columns: &[(&str, &CorpusStats)]) -> String {
    type Cell = fn(&CorpusStats) -> String;
    let rows: [(&str, Cell); 6] = [
        ("Vocabulary size", |s| s.vocabulary_size.to_string()),
        ("Total nr. of words", |s| s.total_words.to_string()),
        ("Type/token ratio", |s| format!("{:.3}", s.type_token_ratio)),
        ("Words per utterance", |s| format!("{:.2}", s.words_per_utterance)),
        ("Utterance length in seconds", |s| {
            format!("{:.2}", s.utterance_length_s)
        }),
        ("Words per second", |s| format!("{:.2}", s.words_per_second)),
    ];
    let mut out = String::new();
    let _ = write!(out, "{:<28}", "Dataset");
    for (name, _) in columns {
        let _ = write!(out, " {name:>10}");
    }
    out.push('\n');
    for (label, cell) in &rows {
        let _ = write!(out, "{label:<28}");
        for (_, stats) in columns {
            let _ = write!(out, " {:>10}", cell(stats));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Register, SpeakerRole};

    #[test]
    fn table_counts_give_reported_ratios() {
        let cds = CorpusStats::from_counts(3170, 97_118, 21_465, 3.37 * 21_465.0);
        assert!((cds.type_token_ratio - 0.033).abs() <= 0.005);
        assert!((cds.words_per_utterance - 4.52).abs() <= 0.005);
        let ads = CorpusStats::from_counts(5665, 203_084, 21_465, 3.46 * 21_465.0);
        assert!((ads.words_per_utterance - 9.46).abs() <= 0.005);
        assert!((ads.type_token_ratio - 0.028).abs() <= 0.005);
    }

    #[test]
    fn single_utterance() {
        let u = Utterance::new("u", Register::Cds, SpeakerRole::Caregiver, "hello", "u.wav", 1.0);
        let s = compute_stats(&[u]).unwrap();
        assert_eq!(s.vocabulary_size, 1);
        assert_eq!(s.type_token_ratio, 1.0);
        assert_eq!(s.words_per_second, 1.0);
    }

    #[test]
    fn vocabulary_is_case_insensitive() {
        let a = Utterance::new(
            "a",
            Register::Cds,
            SpeakerRole::Caregiver,
            "Ball ball BALL",
            "a.wav",
            2.0,
        );
        let b = Utterance::new("b", Register::Cds, SpeakerRole::Caregiver, "the ball", "b.wav", 1.0);
        let s = compute_stats(&[a, b]).unwrap();
        assert_eq!(s.vocabulary_size, 2);
        assert_eq!(s.total_words, 5);
        assert_eq!(s.words_per_utterance, 2.5);
        assert_eq!(s.utterance_length_s, 1.5);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(compute_stats(&[]), Err(CorpusError::Empty)));
    }

    #[test]
    fn table_has_a_column_per_corpus() {
        let s = CorpusStats::from_counts(2, 4, 2, 2.0);
        let table = render_stats_table(&[("CDS", &s), ("ADS", &s)]);
        assert!(table.lines().next().unwrap().contains("CDS"));
        assert!(table.contains("Type/token ratio"));
        assert_eq!(table.lines().count(), 7);
    }
}
