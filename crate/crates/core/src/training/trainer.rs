use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    adam_step, lr_at_step, margin_loss, write_trajectory, AdamState, EpochRecord, TrainConfig, TrainError, TrainState,
};
use crate::autograd::{Graph, Tensor};
use crate::embeddings::EmbeddingSet;
use crate::encoder::{save_checkpoint, Checkpoint, SpeechEncoder};
use crate::features::{cache_path, read_feature_cache, FeatureMatrix};
use crate::retrieval::{evaluate, RankingReport};

/// Training pairs: features and unit-normalised targets, row-aligned.
#[derive(Debug, Clone)]
pub struct Dataset {
    ids: Vec<String>,
    features: Vec<Tensor<f32>>,
    targets: Vec<f32>,
    dim: usize,
}

impl Dataset {
    /// Pair every utterance with its target; fails listing the ids that
    /// have none.
    pub fn new(features: &[FeatureMatrix], targets: &EmbeddingSet) -> Result<Self, TrainError> {
        let ids: Vec<String> = features.iter().map(|f| f.utterance_id().to_string()).collect();
        let missing: Vec<String> = ids.iter().filter(|id| targets.get(id).is_none()).cloned().collect();
        if !missing.is_empty() {
            return Err(TrainError::MissingData {
                kind: "target embedding",
                ids: missing,
                total: ids.len(),
            });
        }
        let mut unit = Vec::with_capacity(ids.len() * targets.dim());
        for id in &ids {
            let v = targets.get(id).expect("coverage checked");
            let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(TrainError::ZeroTarget(id.clone()));
            }
            unit.extend(v.iter().map(|&x| (x as f64 / norm) as f32));
        }
        Ok(Dataset {
            ids,
            features: features.iter().map(FeatureMatrix::to_tensor).collect(),
            targets: unit,
            dim: targets.dim(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn target_dim(&self) -> usize {
        self.dim
    }

    /// Cached features for `ids`; every missing cache file is reported
    /// before any is read.
    pub fn load_features(
        ids: &[String],
        cache_dir: impl AsRef<Path>,
        digest: Option<u32>,
    ) -> Result<Vec<FeatureMatrix>, TrainError> {
        let dir = cache_dir.as_ref();
        let missing: Vec<String> = ids
            .iter()
            .filter(|id| !cache_path(dir, id).is_file())
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(TrainError::MissingData {
                kind: "cached features",
                ids: missing,
                total: ids.len(),
            });
        }
        ids.iter()
            .map(|id| {
                let fm = read_feature_cache(cache_path(dir, id), digest)?;
                if fm.utterance_id() != id {
                    return Err(TrainError::State(format!(
                        "feature cache for {id:?} holds utterance {:?}",
                        fm.utterance_id()
                    )));
                }
                Ok(fm)
            })
            .collect()
    }
}

/// Batches of `batch_size` indices over a seeded permutation of `0..n`; a
/// trailing single index is appended to the previous batch.
pub fn batches_for_epoch(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(last);
    }
    batches
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationMetrics {
    pub recall1: f64,
    pub recall5: f64,
    pub recall10: f64,
    pub median_rank: f64,
}

impl From<&RankingReport> for ValidationMetrics {
    fn from(r: &RankingReport) -> Self {
        ValidationMetrics {
            recall1: r.recall1,
            recall5: r.recall5,
            recall10: r.recall10,
            median_rank: r.median_rank,
        }
    }
}

/// Scores the encoder after each epoch.
pub trait Validator {
    fn validate(&mut self, encoder: &SpeechEncoder<f32>, epoch: usize) -> Result<ValidationMetrics, TrainError>;
}

impl<F> Validator for F
where
    F: FnMut(&SpeechEncoder<f32>, usize) -> Result<ValidationMetrics, TrainError>,
{
    fn validate(&mut self, encoder: &SpeechEncoder<f32>, epoch: usize) -> Result<ValidationMetrics, TrainError> {
        self(encoder, epoch)
    }
}

/// Retrieval metrics on a held-out set.
pub struct RetrievalValidator<'a> {
    pub items: &'a [FeatureMatrix],
    pub targets: &'a EmbeddingSet,
}

impl Validator for RetrievalValidator<'_> {
    fn validate(&mut self, encoder: &SpeechEncoder<f32>, _epoch: usize) -> Result<ValidationMetrics, TrainError> {
        Ok((&evaluate(encoder, self.items, self.targets, "validation")?).into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr_end: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub best_epoch: usize,
    pub best_val_recall1: f64,
    pub log: Vec<EpochRecord>,
}

/// A single seeded training run.
pub struct Trainer {
    config: TrainConfig,
    encoder: SpeechEncoder<f32>,
    state: TrainState,
}

impl Trainer {
    pub fn new(encoder: SpeechEncoder<f32>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let state = TrainState {
            adam: AdamState::for_params(encoder.params()),
            ..TrainState::default()
        };
        Ok(Trainer { config, encoder, state })
    }

    /// Continue from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let state = TrainState::from_bytes(&ck.optimizer)?;
        if state.step() != ck.step {
            return Err(TrainError::State(format!(
                "checkpoint step {} disagrees with optimizer step {}",
                ck.step,
                state.step()
            )));
        }
        let shapes_match = state.adam.first.len() == ck.encoder.params().len()
            && ck
                .encoder
                .params()
                .iter()
                .zip(&state.adam.first)
                .all(|((_, p), m)| p.numel() == m.len());
        if !shapes_match {
            return Err(TrainError::State(
                "optimizer moments do not match the parameters".into(),
            ));
        }
        Ok(Trainer {
            config,
            encoder: ck.encoder,
            state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn encoder(&self) -> &SpeechEncoder<f32> {
        &self.encoder
    }

    pub fn into_encoder(self) -> SpeechEncoder<f32> {
        self.encoder
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            encoder: self.encoder.clone(),
            step: self.state.step(),
            optimizer: self.state.to_bytes(),
        }
    }

    fn check_dataset(&self, data: &Dataset) -> Result<(), TrainError> {
        let cfg = self.encoder.config();
        if data.len() < 2 {
            return Err(TrainError::InvalidBatch(format!(
                "{} training items leave no negatives",
                data.len()
            )));
        }
        if data.dim != cfg.embed_dim {
            return Err(TrainError::DimMismatch {
                what: "target embedding dimension".into(),
                expected: cfg.embed_dim,
                found: data.dim,
            });
        }
        for (id, x) in data.ids.iter().zip(&data.features) {
            if x.shape()[1] != cfg.input_dim {
                return Err(TrainError::DimMismatch {
                    what: format!("feature dimension of {id:?}"),
                    expected: cfg.input_dim,
                    found: x.shape()[1],
                });
            }
            if x.shape()[0] < cfg.conv_kernel {
                return Err(TrainError::InvalidBatch(format!(
                    "{id:?} has {} frames, fewer than the convolution kernel",
                    x.shape()[0]
                )));
            }
        }
        Ok(())
    }

    /// Forward, backward and one Adam update on the items `batch` of
    /// `data`. Returns the batch loss before the update.
    pub fn train_step(&mut self, data: &Dataset, batch: &[usize], lr: f64) -> Result<f64, TrainError> {
        let mut g = Graph::<f32>::new();
        let vars = self.encoder.bind(&mut g, true);
        let mut encodings = Vec::with_capacity(batch.len());
        for &i in batch {
            let x = g.constant(data.features[i].clone());
            encodings.push(vars.encode(&mut g, x)?);
        }
        let speech = g.concat(&encodings, 0)?;
        let dim = data.dim;
        let mut columns = vec![0f32; dim * batch.len()];
        for (col, &i) in batch.iter().enumerate() {
            for (k, &v) in data.targets[i * dim..(i + 1) * dim].iter().enumerate() {
                columns[k * batch.len() + col] = v;
            }
        }
        let targets = g.constant(Tensor::new(vec![dim, batch.len()], columns)?);
        let sims = g.matmul(speech, targets)?;
        let loss = margin_loss(&mut g, sims, self.config.margin)?;
        let value = g.value(loss).data()[0] as f64;

        let all = vars.all().to_vec();
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor<f32>> = all
            .iter()
            .zip(self.encoder.params())
            .map(|(&v, (_, p))| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape().to_vec())))
            .collect();
        adam_step(
            self.encoder.params_mut(),
            &grads,
            &mut self.state.adam,
            lr,
            &self.config,
        )?;
        Ok(value)
    }

    /// One pass over `data` in the batches of `epoch` (1-based).
    pub fn train_epoch(&mut self, data: &Dataset, epoch: usize) -> Result<EpochSummary, TrainError> {
        self.check_dataset(data)?;
        let batches = batches_for_epoch(data.len(), self.config.batch_size, self.config.seed, epoch);
        let mut total = 0.0;
        let mut lr = self.config.lr_min;
        for batch in &batches {
            lr = lr_at_step(self.state.step(), batches.len(), &self.config);
            total += self.train_step(data, batch, lr)?;
        }
        Ok(EpochSummary {
            epoch,
            mean_loss: total / batches.len() as f64,
            lr_end: lr,
            steps: batches.len(),
        })
    }

    /// Train the remaining epochs up to `config.epochs`, validating after
    /// each. The best epoch is the earliest with the highest validation
    /// recall@1.
    pub fn fit(&mut self, data: &Dataset, validator: &mut dyn Validator) -> Result<FitReport, TrainError> {
        self.check_dataset(data)?;
        if let Some(dir) = &self.config.checkpoint_dir {
            fs::create_dir_all(dir).map_err(|source| TrainError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        for epoch in self.state.epochs_completed() + 1..=self.config.epochs {
            let summary = self.train_epoch(data, epoch)?;
            let m = validator.validate(&self.encoder, epoch)?;
            self.state.log.push(EpochRecord {
                epoch,
                mean_loss: summary.mean_loss,
                lr_end: summary.lr_end,
                val_recall1: m.recall1,
                val_recall5: m.recall5,
                val_recall10: m.recall10,
                val_median_rank: m.median_rank,
            });
            let improved = self.state.best_val_recall1.is_none_or(|best| m.recall1 > best);
            if improved {
                self.state.best_val_recall1 = Some(m.recall1);
                self.state.best_epoch = Some(epoch);
            }
            log::info!(
                "epoch {epoch}: loss {:.4}, lr {:.2e}, val R@1 {:.3} R@5 {:.3} R@10 {:.3} med {:.1}",
                summary.mean_loss,
                summary.lr_end,
                m.recall1,
                m.recall5,
                m.recall10,
                m.median_rank
            );
            if let Some(dir) = self.config.checkpoint_dir.clone() {
                let path = dir.join(format!("epoch_{epoch}.sgck"));
                save_checkpoint(&path, &self.checkpoint())?;
                if improved {
                    let best = dir.join("best.sgck");
                    fs::copy(&path, &best).map_err(|source| TrainError::Io { path: best, source })?;
                }
                write_trajectory(dir.join("trajectory.csv"), &self.state.log)?;
            }
        }
        match (self.state.best_epoch, self.state.best_val_recall1) {
            (Some(best_epoch), Some(best_val_recall1)) => Ok(FitReport {
                best_epoch,
                best_val_recall1,
                log: self.state.log.clone(),
            }),
            _ => Err(TrainError::State("no epochs were trained".into())),
        }
    }
}
