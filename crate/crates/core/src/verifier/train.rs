use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::argmax;
use super::optim::{AdamSettings, Optimizer, OptimizerKind};
use super::{Example, Model};
use crate::error::{Error, Result};
use crate::eval::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam: AdamSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            batch_size: 24,
            epochs: 30,
            seed: 7,
            optimizer: OptimizerKind::Adam,
            adam: AdamSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub metrics: BTreeMap<String, f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochRecord>,
}

/// Mini-batch training with a fresh seeded shuffle every epoch. Per-sample
/// gradients may be computed in parallel but are always summed in batch
/// order, so results do not depend on the thread count.
pub fn train(
    mut model: Model,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let classes = model.config.labels.len();
    if let Some(bad) = train.iter().chain(dev).find(|e| e.label >= classes) {
        return Err(Error::invalid(format!(
            "sample {} has label index {} outside {classes} classes",
            bad.id, bad.label
        )));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut params = model.flat();
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, config.adam, params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<Result<(f64, usize, Model)>> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train[i];
                    let trace = model.forward(&ex.graph)?;
                    let guess = argmax(trace.probs());
                    let (loss, grad) = model.backward(&ex.graph, &trace, ex.label)?;
                    Ok((loss, guess, grad))
                })
                .collect();
            let mut total: Option<Model> = None;
            let mut batch_loss = 0.0;
            for (&i, r) in batch.iter().zip(results) {
                let (loss, guess, grad) = r?;
                batch_loss += loss;
                correct += usize::from(guess == train[i].label);
                match &mut total {
                    Some(t) => t.add_assign(&grad),
                    None => total = Some(grad),
                }
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, step, batch, train, &model));
            }
            loss_sum += batch_loss;
            let mut grads = total.expect("batches are non-empty").flat();
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g *= scale);
            opt.step(&mut params, &grads);
            if params.iter().any(|p| !p.is_finite()) {
                return Err(diverged(epoch, step, batch, train, &model));
            }
            model.set_flat(&params)?;
        }
        let mut metrics = BTreeMap::new();
        metrics.insert("train_accuracy".to_string(), correct as f64 / train.len() as f64);
        if !dev.is_empty() {
            let (report, _) = evaluate(&model, dev, "")?;
            metrics.insert("dev_accuracy".to_string(), report.accuracy);
            metrics.insert("dev_fever_score".to_string(), report.fever_score);
        }
        let record = EpochRecord {
            epoch,
            step,
            loss: loss_sum / train.len() as f64,
            metrics,
            wall_time: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} {:?}",
            record.loss,
            record.metrics
        );
        on_epoch(&record)?;
        log.push(record);
    }
    Ok(TrainOutcome { model, log })
}

fn diverged(epoch: usize, step: usize, batch: &[usize], train: &[Example], model: &Model) -> Error {
    Error::Diverged {
        epoch,
        step,
        sample_ids: batch.iter().map(|&i| train[i].id.clone()).collect(),
        param_norm: model.norm(),
    }
}
