use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, AdamState, DEFAULT_LEARNING_RATE};
use crate::net::{ensemble_forward, joint_loss, loss_and_gradients, EnsembleParams, NetConfig};
use crate::pcg_data::{LabelSet, Sample};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
    /// Stop once the epoch's training macro F1 reaches this value.
    pub stop_at_train_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 32,
            max_epochs: 30,
            patience: None,
            stop_at_train_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be ≥ 1".into()));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Macro F1 of the predictions made while the epoch trained.
    pub train_f1: f64,
    pub val_loss: Option<f64>,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: EnsembleParams,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (1-based).
    pub best_epoch: usize,
}

/// Mean joint loss and macro F1 of `params` over `samples`.
pub fn evaluate(params: &EnsembleParams, samples: &[Sample]) -> Result<(f64, f64, Vec<LabelSet>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let out = ensemble_forward(params, s)?;
        loss += joint_loss(&out, s.labels, params.config.global_weight)?;
        preds.push(out.predict());
    }
    let truths: Vec<LabelSet> = samples.iter().map(|s| s.labels).collect();
    let f1 = compute_metrics(&preds, &truths)?.macro_avg.f1;
    Ok((loss / samples.len() as f64, f1, preds))
}

/// Minibatch Adam on the joint objective. Initialization and per-epoch
/// shuffling both derive from `seed`.
pub fn train(
    net: &NetConfig,
    config: &TrainConfig,
    train_set: &[Sample],
    validation: &[Sample],
    seed: u64,
) -> Result<TrainOutcome> {
    train_observed(net, config, train_set, validation, seed, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    net: &NetConfig,
    config: &TrainConfig,
    train_set: &[Sample],
    validation: &[Sample],
    seed: u64,
    mut observe: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = EnsembleParams::init(net, seed)?;
    let mut adam = AdamState::new(&params.store, config.learning_rate);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    order_rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let truths: Vec<LabelSet> = train_set.iter().map(|s| s.labels).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, EnsembleParams)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut preds = vec![LabelSet::NORMAL; train_set.len()];
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            params.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (loss, grads, out) = loss_and_gradients(&params, &train_set[i])?;
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!(
                        "loss {loss} at epoch {epoch} on sample {i}"
                    )));
                }
                loss_sum += loss;
                preds[i] = out.predict();
                params.store.accumulate(&grads, scale)?;
            }
            adam.apply(&mut params.store)?;
        }
        let train_f1 = compute_metrics(&preds, &truths)?.macro_avg.f1;
        let (val_loss, val_f1) = if validation.is_empty() {
            (None, None)
        } else {
            let (l, f, _) = evaluate(&params, validation)?;
            (Some(l), Some(f))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_f1,
            val_loss,
            val_f1,
        };
        observe(&record);
        history.push(record);

        if let Some(vl) = val_loss {
            if best.as_ref().map_or(true, |(b, _, _)| vl < *b) {
                best = Some((vl, epoch, params.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            if config.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
        if config.stop_at_train_f1.is_some_and(|t| train_f1 >= t) {
            break;
        }
    }
    let last = history.len();
    let (params, best_epoch) = match best {
        Some((_, epoch, p)) if config.patience.is_some() => (p, epoch),
        _ => (params, last),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}
