//! Mini-batch contrastive training with validation-based model selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{calibrate_threshold, learning_rate, objectives, optimizers, sample_negatives_with, DecisionPolicy, Model};
use crate::corpus::{Corpus, Document, LabelId};
use crate::error::{Error, Result};
use crate::metrics::DocSets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub warmup_ratio: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    pub objective: String,
    pub optimizer: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            batch_size: 16,
            learning_rate: 5e-5,
            epochs: 10,
            seed: 0,
            warmup_ratio: 0.1,
            patience: None,
            objective: "mean-cosine".into(),
            optimizer: "sgd".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        super::objective::check_tau(self.tau)?;
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "batch_size={} must be at least 2",
                self.batch_size
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("learning_rate={}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::InvalidParameter(format!("warmup_ratio={}", self.warmup_ratio)));
        }
        objectives().get(&self.objective)?;
        optimizers().get(&self.optimizer)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
    pub skipped_batches: usize,
    pub valid_micro_f1: Option<f64>,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best model by validation Micro-F1, or the last one without validation.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

/// Trains both encoders of `model` on the train split of `corpus`. Each
/// epoch is scored on the validation split, ranking against
/// `valid_candidates` (documents missing from it rank all labels).
pub fn train(
    mut model: Model,
    corpus: &Corpus,
    valid_candidates: &BTreeMap<String, BTreeSet<LabelId>>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let objective = (objectives().get(&config.objective)?)();
    let mut optimizer = (optimizers().get(&config.optimizer)?)();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut train_docs: Vec<&Document> = corpus
        .train_docs()
        .into_iter()
        .filter(|d| !d.gold_labels.is_empty())
        .collect();
    if train_docs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let valid_docs = corpus.split_docs(crate::corpus::SplitName::Valid);
    let valid_gold: DocSets = valid_docs
        .iter()
        .map(|d| (d.id.clone(), d.gold_labels.clone()))
        .collect();

    let per_epoch = train_docs.len().div_ceil(config.batch_size);
    let total_steps = per_epoch * config.epochs;
    let mut step = 0;
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        train_docs.shuffle(&mut rng);
        let (mut loss_sum, mut batches, mut skipped) = (0.0, 0, 0);
        for chunk in train_docs.chunks(config.batch_size) {
            let members: Vec<(String, BTreeSet<LabelId>)> =
                chunk.iter().map(|d| (d.id.clone(), d.gold_labels.clone())).collect();
            let batch = match sample_negatives_with(&members, &mut rng) {
                Ok(b) => b,
                Err(Error::DegenerateBatch(why)) => {
                    log::warn!("epoch {epoch}: skipping batch ({why})");
                    skipped += 1;
                    step += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grads = model.loss_and_gradients(chunk, &batch, objective.as_ref(), config.tau)?;
            if !grads.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let lr = learning_rate(step, total_steps, config.warmup_ratio, config.learning_rate);
            let mut params = model.text.parameters_mut();
            params.extend(model.label_encoder.parameters_mut());
            let all: Vec<_> = grads.text.into_iter().chain(grads.label).collect();
            optimizer.step(params, &all, lr)?;
            loss_sum += grads.loss;
            batches += 1;
            step += 1;
        }
        let mean_loss = if batches == 0 {
            f64::NAN
        } else {
            loss_sum / batches as f64
        };

        let (mut valid_micro_f1, mut threshold) = (None, None);
        if !valid_docs.is_empty() {
            let ranked = model.ranker()?.rank_documents(&valid_docs, valid_candidates)?;
            let (t, f1) = calibrate_threshold(&ranked, &valid_gold);
            valid_micro_f1 = Some(f1);
            threshold = Some(t);
            if best.as_ref().is_none_or(|b| f1 > b.0) {
                let mut snapshot = model.clone();
                snapshot.policy = DecisionPolicy::Threshold { t };
                best = Some((f1, epoch, snapshot));
                since_best = 0;
            } else {
                since_best += 1;
            }
        }
        log::info!(
            "epoch {epoch}: loss {mean_loss:.6} over {batches} batches ({skipped} skipped), valid micro-F1 {}",
            valid_micro_f1.map_or("n/a".to_string(), |f| format!("{f:.4}"))
        );
        log.push(EpochLog {
            epoch,
            mean_loss,
            batches,
            skipped_batches: skipped,
            valid_micro_f1,
            threshold,
        });
        if config.patience.is_some_and(|p| since_best >= p) {
            log::info!("early stop after epoch {epoch}");
            break;
        }
    }

    Ok(match best {
        Some((_, epoch, model)) => TrainOutcome {
            model,
            log,
            best_epoch: Some(epoch),
        },
        None => TrainOutcome {
            model,
            log,
            best_epoch: None,
        },
    })
}
