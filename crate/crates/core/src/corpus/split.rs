use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, SpeakerRole, Utterance};

/// Keep the utterances spoken by `keep_role`. Segments labelled
/// [`SpeakerRole::Multiple`] never pass.
pub fn filter_utterances(utterances: &[Utterance], keep_role: SpeakerRole) -> Vec<Utterance> {
    utterances
        .iter()
        .filter(|u| u.speaker_role == keep_role && u.speaker_role != SpeakerRole::Multiple)
        .cloned()
        .collect()
}

/// Drop utterances that cannot be grounded: no tokens after cleaning, or a
/// non-positive duration. Each drop is logged.
pub fn drop_unusable(utterances: Vec<Utterance>) -> Vec<Utterance> {
    utterances
        .into_iter()
        .filter(|u| {
            if u.tokens.is_empty() {
                log::warn!("dropping {}: no tokens after cleaning ({:?})", u.id, u.transcript);
                false
            } else if u.duration_s <= 0.0 {
                log::warn!("dropping {}: duration {} s", u.id, u.duration_s);
                false
            } else {
                true
            }
        })
        .collect()
}

/// Indices `0..n` in a seeded random order.
fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    idx
}

/// Items at `indices`, in their original order.
fn pick(items: &[Utterance], indices: &[usize]) -> Vec<Utterance> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.into_iter().map(|i| items[i].clone()).collect()
}

/// Subsample the larger register down to the size of the smaller one.
/// The smaller list is returned unchanged.
pub fn balance_registers(cds: &[Utterance], ads: &[Utterance], seed: u64) -> (Vec<Utterance>, Vec<Utterance>) {
    let target = cds.len().min(ads.len());
    let shrink = |items: &[Utterance]| {
        if items.len() == target {
            items.to_vec()
        } else {
            pick(items, &permutation(items.len(), seed)[..target])
        }
    };
    (shrink(cds), shrink(ads))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub n_validation: usize,
    pub n_test: usize,
    /// When false the remainder is not used for training and is returned in
    /// [`Splits::unassigned`].
    pub remainder_to_train: bool,
}

impl SplitSpec {
    pub fn new(seed: u64, n_validation: usize, n_test: usize) -> Self {
        Self {
            seed,
            n_validation,
            n_test,
            remainder_to_train: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Utterance>,
    pub validation: Vec<Utterance>,
    pub test: Vec<Utterance>,
    pub unassigned: Vec<Utterance>,
}

/// Seeded disjoint split into train / validation / test. The first
/// `n_validation` entries of the permutation go to validation, the next
/// `n_test` to test and the rest to train.
pub fn split_corpus(utterances: &[Utterance], spec: &SplitSpec) -> Result<Splits, CorpusError> {
    let n = utterances.len();
    if spec.n_validation + spec.n_test >= n {
        return Err(CorpusError::InfeasibleSplit {
            n_validation: spec.n_validation,
            n_test: spec.n_test,
            size: n,
        });
    }
    if let Some(u) = utterances.iter().find(|u| u.duration_s <= 0.0) {
        return Err(CorpusError::NonPositiveDuration { id: u.id.clone() });
    }
    let perm = permutation(n, spec.seed);
    let (val, rest) = perm.split_at(spec.n_validation);
    let (test, rest) = rest.split_at(spec.n_test);
    let remainder = pick(utterances, rest);
    let (train, unassigned) = if spec.remainder_to_train {
        (remainder, Vec::new())
    } else {
        (Vec::new(), remainder)
    };
    Ok(Splits {
        train,
        validation: pick(utterances, val),
        test: pick(utterances, test),
        unassigned,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;
    use crate::corpus::Register;

    fn corpus(n: usize, role: SpeakerRole) -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                Utterance::new(
                    format!("u{i}"),
                    Register::Cds,
                    role,
                    "hello there",
                    format!("{i}.wav"),
                    1.0,
                )
            })
            .collect()
    }

    #[test]
    fn filter_keeps_only_requested_role() {
        let mut utts = corpus(1, SpeakerRole::Caregiver);
        utts.extend(corpus(1, SpeakerRole::Child));
        utts.extend(corpus(1, SpeakerRole::Multiple));
        utts[1].id = "child".into();
        utts[2].id = "multi".into();
        let kept = filter_utterances(&utts, SpeakerRole::Caregiver);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].speaker_role, SpeakerRole::Caregiver);
        assert!(filter_utterances(&utts, SpeakerRole::Multiple).is_empty());
    }

    #[test]
    fn filter_identity_and_empty() {
        let all = corpus(4, SpeakerRole::Caregiver);
        assert_eq!(filter_utterances(&all, SpeakerRole::Caregiver), all);
        assert!(filter_utterances(&[], SpeakerRole::Caregiver).is_empty());
    }

    #[test]
    fn balance_matches_smaller_register() {
        let cds = corpus(30_000, SpeakerRole::Caregiver);
        let ads = corpus(21_465, SpeakerRole::Caregiver);
        let (c, a) = balance_registers(&cds, &ads, 7);
        assert_eq!(c.len(), 21_465);
        assert_eq!(a, ads);
        let unique: HashSet<_> = c.iter().map(|u| &u.id).collect();
        assert_eq!(unique.len(), 21_465);
        let (c2, _) = balance_registers(&cds, &ads, 7);
        assert_eq!(c, c2);
    }

    #[test]
    fn balance_equal_sizes_is_identity() {
        let cds = corpus(10, SpeakerRole::Caregiver);
        let (c, a) = balance_registers(&cds, &cds, 1);
        assert_eq!(c, cds);
        assert_eq!(a, cds);
    }

    #[test]
    fn split_sizes_for_table_scale_corpus() {
        let utts = corpus(21_465, SpeakerRole::Caregiver);
        let s = split_corpus(&utts, &SplitSpec::new(1, 1000, 1000)).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (19_465, 1000, 1000));
    }

    #[test]
    fn split_tiny_and_infeasible() {
        let utts = corpus(3, SpeakerRole::Caregiver);
        let s = split_corpus(&utts, &SplitSpec::new(0, 1, 1)).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1, 1, 1));
        let err = split_corpus(&utts[..2], &SplitSpec::new(0, 1, 2)).unwrap_err();
        assert!(matches!(err, CorpusError::InfeasibleSplit { .. }));
    }

    #[test]
    fn split_rejects_zero_duration() {
        let mut utts = corpus(5, SpeakerRole::Caregiver);
        utts[3].duration_s = 0.0;
        assert!(matches!(
            split_corpus(&utts, &SplitSpec::new(0, 1, 1)),
            Err(CorpusError::NonPositiveDuration { .. })
        ));
    }

    #[test]
    fn remainder_can_be_withheld() {
        let utts = corpus(10, SpeakerRole::Caregiver);
        let spec = SplitSpec {
            remainder_to_train: false,
            ..SplitSpec::new(4, 2, 2)
        };
        let s = split_corpus(&utts, &spec).unwrap();
        assert!(s.train.is_empty());
        assert_eq!(s.unassigned.len(), 6);
    }

    #[test]
    fn drop_unusable_removes_empty_transcripts() {
        let mut utts = corpus(3, SpeakerRole::Caregiver);
        utts[1] = Utterance::new(
            "blank",
            Register::Cds,
            SpeakerRole::Caregiver,
            "[= laughs]",
            "b.wav",
            1.0,
        );
        let kept = drop_unusable(utts);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|u| u.id != "blank"));
    }

    proptest! {
        #[test]
        fn split_partitions_input(n in 3usize..200, seed in any::<u64>(), a in 0usize..100, b in 0usize..100) {
            let n_val = a % n;
            let n_test = b % (n - n_val);
            prop_assume!(n_val + n_test < n);
            let utts = corpus(n, SpeakerRole::Caregiver);
            let s = split_corpus(&utts, &SplitSpec::new(seed, n_val, n_test)).unwrap();
            prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
            let ids: HashSet<_> = s.train.iter().chain(&s.validation).chain(&s.test).map(|u| u.id.clone()).collect();
            prop_assert_eq!(ids.len(), n);
            prop_assert_eq!(s.validation.len(), n_val);
            prop_assert_eq!(s.test.len(), n_test);
            let again = split_corpus(&utts, &SplitSpec::new(seed, n_val, n_test)).unwrap();
            prop_assert_eq!(again, s);
        }
    }
}
