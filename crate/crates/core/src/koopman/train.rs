//! Mini-batch training with Adam and best-validation checkpointing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    batch_iterator, fit_normalizer, make_windows, BatchSampler, NormalizedData, RolloutWindow, Split, TrajectoryDataset,
};
use crate::neuralnet::AdamState;
use crate::{Error, Result};

use super::{Architecture, BatchRollout, KoopmanModel, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            l2: 0.1,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.batch_size == 0 {
            return Err(Error::Config("horizon and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!(
                "l2 coefficient {} must be non-negative",
                self.l2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean data loss over the epoch's mini-batches.
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: KoopmanModel,
    pub history: Vec<EpochRecord>,
    /// `None` when no epoch ran and the initial model is returned.
    pub best_epoch: Option<usize>,
}

const EVAL_CHUNK: usize = 512;

/// Fit a fresh model of the given variant on the training split.
pub fn train(
    variant: Variant,
    arch: &Architecture,
    dataset: &TrajectoryDataset,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    config.validate()?;
    let normalizer = fit_normalizer(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = KoopmanModel::initialize(variant, arch, normalizer, &mut rng)?;
    train_from(model, dataset, config)
}

/// Continue training `model` (its normalizer is kept as is).
pub fn train_from(
    mut model: KoopmanModel,
    dataset: &TrajectoryDataset,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    config.validate()?;
    let data = NormalizedData::new(dataset, &model.normalizer)?;
    let train_windows = make_windows(dataset, Split::Train, config.horizon)?;
    let val_windows = make_windows(dataset, Split::Validation, config.horizon)?;
    let val_batches = chunked(&data, &val_windows)?;

    let layout = model.param_layout();
    let mut params = model.params();
    let mut adam = AdamState::new(params.len(), config.learning_rate);
    let mut sampler = BatchSampler::new(train_windows.len(), config.batch_size, config.seed.wrapping_add(0x5eed))?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 1..=config.epochs {
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for batch in batch_iterator(&train_windows, &mut sampler) {
            let rollout = BatchRollout::gather(&data, &batch)?;
            let out = model
                .loss_and_gradient(&rollout, config.l2)
                .map_err(|e| training_error(epoch, e))?;
            loss_sum += out.data * batch.len() as f64;
            count += batch.len();
            adam.step(&mut params, &out.gradient, &layout)?;
            model.set_params(&params)?;
        }
        let train_loss = loss_sum / count as f64;
        let validation_loss = mean_data_loss(&model, &val_batches).map_err(|e| training_error(epoch, e))?;
        if !validation_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "validation loss is not finite".into(),
            });
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} validation {validation_loss:.6e}");
        if best.as_ref().is_none_or(|(_, v, _)| validation_loss < *v) {
            best = Some((epoch, validation_loss, params.clone()));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
    }

    let best_epoch = match best {
        Some((epoch, _, best_params)) => {
            model.set_params(&best_params)?;
            Some(epoch)
        }
        None => None,
    };
    Ok(TrainingOutcome {
        model,
        history,
        best_epoch,
    })
}

fn training_error(epoch: usize, e: Error) -> Error {
    match e {
        Error::RolloutDiverged { step } => Error::Training {
            epoch,
            message: format!("rollout diverged at step {step}"),
        },
        other => other,
    }
}

fn chunked(data: &NormalizedData, windows: &[RolloutWindow]) -> Result<Vec<(usize, BatchRollout)>> {
    windows
        .chunks(EVAL_CHUNK)
        .map(|chunk| {
            let refs: Vec<&RolloutWindow> = chunk.iter().collect();
            Ok((chunk.len(), BatchRollout::gather(data, &refs)?))
        })
        .collect()
}

fn mean_data_loss(model: &KoopmanModel, batches: &[(usize, BatchRollout)]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0;
    for (len, batch) in batches {
        sum += model.data_loss(batch)? * *len as f64;
        count += len;
    }
    Ok(sum / count as f64)
}

/// Average per-step prediction error: the window's squared error in
/// normalized units, summed over channels and steps `0..=H`, divided by
/// `H + 1` and averaged over every window of `split`. Normalization uses the
/// model's training statistics, so a predictor that always outputs the
/// training mean scores about `n` (1 per channel).
pub fn evaluate(model: &KoopmanModel, dataset: &TrajectoryDataset, split: Split, horizon: usize) -> Result<f64> {
    let data = NormalizedData::new(dataset, &model.normalizer)?;
    let windows = make_windows(dataset, split, horizon)?;
    let mut sum = 0.0;
    for (_, batch) in chunked(&data, &windows)? {
        sum += model.step_errors(&batch)?.iter().sum::<f64>();
    }
    Ok(sum / (windows.len() * (horizon + 1)) as f64)
}
