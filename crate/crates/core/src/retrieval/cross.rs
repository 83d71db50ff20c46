use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use super::{encode_all, rank_encodings, write_reports_csv, RankingReport, RetrievalError};
use crate::corpus::Register;
use crate::embeddings::EmbeddingSet;
use crate::encoder::SpeechEncoder;
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TestSet {
    Cds,
    Ads,
    /// Union of the two register test sets.
    Combined,
}

impl TestSet {
    pub const ALL: [TestSet; 3] = [TestSet::Cds, TestSet::Ads, TestSet::Combined];

    pub fn as_str(self) -> &'static str {
        match self {
            TestSet::Cds => "cds",
            TestSet::Ads => "ads",
            TestSet::Combined => "combined",
        }
    }

    fn label(self) -> &'static str {
        match self {
            TestSet::Cds => "CDS",
            TestSet::Ads => "ADS",
            TestSet::Combined => "Combined",
        }
    }
}

fn model_index(register: Register) -> usize {
    match register {
        Register::Cds => 0,
        Register::Ads => 1,
    }
}

fn test_index(test: TestSet) -> usize {
    match test {
        TestSet::Cds => 0,
        TestSet::Ads => 1,
        TestSet::Combined => 2,
    }
}

/// The two register models trained from one seed.
#[derive(Debug, Clone, Copy)]
pub struct SeedModels<'a> {
    pub seed: u64,
    pub cds: &'a SpeechEncoder<f32>,
    pub ads: &'a SpeechEncoder<f32>,
}

/// Reports indexed `[training register][test set]`.
pub type ReportGrid = [[RankingReport; 3]; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct CrossRegisterMatrix {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<ReportGrid>,
    /// Field-wise means over seeds; median ranks are means of per-seed medians.
    pub mean: ReportGrid,
}

impl CrossRegisterMatrix {
    pub fn get(&self, model: Register, test: TestSet) -> &RankingReport {
        &self.mean[model_index(model)][test_index(test)]
    }

    pub fn get_seed(&self, seed_index: usize, model: Register, test: TestSet) -> &RankingReport {
        &self.per_seed[seed_index][model_index(model)][test_index(test)]
    }

    /// Human-readable table: one block per training register.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        writeln!(out, "Mean over seeds {}", seeds.join(", ")).unwrap();
        writeln!(
            out,
            "{:<8}{:<10}{:>8}{:>8}{:>8}{:>9}",
            "Model", "Test", "R@1", "R@5", "R@10", "Med.r"
        )
        .unwrap();
        for model in Register::ALL {
            for (i, test) in TestSet::ALL.into_iter().enumerate() {
                let r = self.get(model, test);
                let name = if i == 0 {
                    model.as_str().to_uppercase()
                } else {
                    String::new()
                };
                writeln!(
                    out,
                    "{:<8}{:<10}{:>8.3}{:>8.3}{:>8.3}{:>9.2}",
                    name,
                    test.label(),
                    r.recall1,
                    r.recall5,
                    r.recall10,
                    r.median_rank
                )
                .unwrap();
            }
        }
        out
    }

    /// `cross_register.csv` (means) and `cross_register_seed_<s>.csv` files
    /// in `dir`; rows are named `<model>-><test>`.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let dir = dir.as_ref();
        write_reports_csv(dir.join("cross_register.csv"), &flatten(&self.mean))?;
        for (seed, grid) in self.seeds.iter().zip(&self.per_seed) {
            write_reports_csv(dir.join(format!("cross_register_seed_{seed}.csv")), &flatten(grid))?;
        }
        Ok(())
    }
}

fn flatten(grid: &ReportGrid) -> Vec<RankingReport> {
    grid.iter().flatten().cloned().collect()
}

fn report_name(model: Register, test: TestSet) -> String {
    format!("{}->{}", model.as_str(), test.as_str())
}

/// Evaluate each seed's CDS and ADS model on the CDS, ADS and combined test
/// sets.
pub fn evaluate_cross_register(
    models: &[SeedModels<'_>],
    cds_test: &[FeatureMatrix],
    ads_test: &[FeatureMatrix],
    targets: &EmbeddingSet,
) -> Result<CrossRegisterMatrix, RetrievalError> {
    if models.is_empty() {
        return Err(RetrievalError::NoRuns);
    }
    if cds_test.is_empty() || ads_test.is_empty() {
        return Err(RetrievalError::EmptyPool);
    }
    let cds_ids: Vec<&str> = cds_test.iter().map(FeatureMatrix::utterance_id).collect();
    let ads_ids: Vec<&str> = ads_test.iter().map(FeatureMatrix::utterance_id).collect();
    let cds_set: HashSet<&str> = cds_ids.iter().copied().collect();
    let shared: Vec<String> = ads_ids
        .iter()
        .filter(|id| cds_set.contains(*id))
        .map(|id| id.to_string())
        .collect();
    if !shared.is_empty() {
        return Err(RetrievalError::OverlappingTestSets(shared));
    }
    let combined_ids: Vec<&str> = cds_ids.iter().chain(&ads_ids).copied().collect();
    targets.check_coverage(combined_ids.iter().copied())?;

    let mut per_seed = Vec::with_capacity(models.len());
    for m in models {
        let grid = [(Register::Cds, m.cds), (Register::Ads, m.ads)].map(|(register, encoder)| {
            let cds_enc = encode_all(encoder, cds_test)?;
            let ads_enc = encode_all(encoder, ads_test)?;
            let combined_enc: Vec<Vec<f32>> = cds_enc.iter().chain(&ads_enc).cloned().collect();
            let report = |test, enc: &[Vec<f32>], ids: &[&str]| -> Result<RankingReport, RetrievalError> {
                let ranks = rank_encodings(enc, ids, targets)?;
                Ok(RankingReport::from_ranks(
                    report_name(register, test),
                    ids.len(),
                    &ranks,
                ))
            };
            Ok::<_, RetrievalError>([
                report(TestSet::Cds, &cds_enc, &cds_ids)?,
                report(TestSet::Ads, &ads_enc, &ads_ids)?,
                report(TestSet::Combined, &combined_enc, &combined_ids)?,
            ])
        });
        let [cds, ads] = grid;
        per_seed.push([cds?, ads?]);
    }
    let mean = std::array::from_fn(|mi| {
        std::array::from_fn(|ti| {
            let column: Vec<RankingReport> = per_seed.iter().map(|g| g[mi][ti].clone()).collect();
            RankingReport::mean(&column).expect("at least one seed")
        })
    });
    Ok(CrossRegisterMatrix {
        seeds: models.iter().map(|m| m.seed).collect(),
        per_seed,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn enc(seed: u64) -> SpeechEncoder<f32> {
        SpeechEncoder::new(EncoderConfig {
            input_dim: 2,
            conv_channels: 2,
            conv_kernel: 2,
            conv_stride: 1,
            gru_hidden: 2,
            gru_layers: 1,
            embed_dim: 3,
            attention_dim: 2,
            init_seed: seed,
        })
        .unwrap()
    }

    fn fixture() -> (Vec<FeatureMatrix>, Vec<FeatureMatrix>, EmbeddingSet) {
        let mut targets = EmbeddingSet::new(3).unwrap();
        let mut make = |prefix: &str, n: usize| -> Vec<FeatureMatrix> {
            (0..n)
                .map(|i| {
                    let id = format!("{prefix}{i}");
                    let v = i as f32 + if prefix == "a" { 0.5 } else { 0.0 };
                    targets.push(&id, &[v.sin(), v.cos(), 0.3]).unwrap();
                    FeatureMatrix::new(id, 5, 2, (0..10).map(|k| (k as f32 * v).cos()).collect(), 0).unwrap()
                })
                .collect()
        };
        let cds = make("c", 6);
        let ads = make("a", 4);
        (cds, ads, targets)
    }

    #[test]
    fn identical_models_give_identical_rows() {
        let (cds, ads, targets) = fixture();
        let model = enc(3);
        let m = evaluate_cross_register(
            &[SeedModels {
                seed: 1,
                cds: &model,
                ads: &model,
            }],
            &cds,
            &ads,
            &targets,
        )
        .unwrap();
        for test in TestSet::ALL {
            let (a, b) = (m.get(Register::Cds, test), m.get(Register::Ads, test));
            assert_eq!(
                (a.recall1, a.recall5, a.median_rank),
                (b.recall1, b.recall5, b.median_rank)
            );
        }
        assert_eq!(m.get(Register::Cds, TestSet::Combined).n_candidates, 10);
        assert_eq!(m.get(Register::Ads, TestSet::Ads).test_set, "ads->ads");
        assert!(m.render_table().contains("Combined"));
    }

    #[test]
    fn means_average_seeds() {
        let (cds, ads, targets) = fixture();
        let (a, b, c, d) = (enc(1), enc(2), enc(3), enc(4));
        let m = evaluate_cross_register(
            &[
                SeedModels {
                    seed: 1,
                    cds: &a,
                    ads: &b,
                },
                SeedModels {
                    seed: 2,
                    cds: &c,
                    ads: &d,
                },
            ],
            &cds,
            &ads,
            &targets,
        )
        .unwrap();
        let x = m.get_seed(0, Register::Ads, TestSet::Cds).median_rank;
        let y = m.get_seed(1, Register::Ads, TestSet::Cds).median_rank;
        assert_eq!(m.get(Register::Ads, TestSet::Cds).median_rank, (x + y) / 2.0);

        let dir = tempfile::tempdir().unwrap();
        m.write_csvs(dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("cross_register.csv")).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(dir.path().join("cross_register_seed_2.csv").exists());
    }

    #[test]
    fn overlapping_test_sets_are_rejected() {
        let (cds, _, targets) = fixture();
        let model = enc(1);
        let err = evaluate_cross_register(
            &[SeedModels {
                seed: 1,
                cds: &model,
                ads: &model,
            }],
            &cds,
            &cds[..2],
            &targets,
        )
        .unwrap_err();
        assert!(matches!(err, RetrievalError::OverlappingTestSets(ids) if ids.len() == 2));
    }
}
