//! Minibatch training loop.
//!
//! Each example in a batch gets its own tape, run in parallel; per-example
//! gradients are then summed in batch order so results do not depend on
//! thread scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{Example, Model};
use crate::rng::Rng;
use crate::train::autograd::{Gradients, Tape};
use crate::train::optim::OptimizerKind;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early after this many updates.
    pub max_steps: Option<usize>,
    /// Global gradient-norm clip; `0` disables it.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerKind::adam(1e-3),
            batch_size: 16,
            epochs: 1,
            max_steps: None,
            clip_norm: 5.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    /// Mean example loss of every update.
    pub step_losses: Vec<f64>,
    pub epochs_run: usize,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }

    /// Mean loss over the first `n` updates.
    pub fn head_loss(&self, n: usize) -> f64 {
        let n = n.min(self.step_losses.len()).max(1);
        self.step_losses[..n].iter().sum::<f64>() / n as f64
    }

    /// Mean loss over the last `n` updates.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let n = n.min(self.step_losses.len()).max(1);
        self.step_losses[self.step_losses.len() - n..].iter().sum::<f64>() / n as f64
    }
}

fn example_gradients(model: &Model, example: &Example, rng: &mut Rng) -> Result<(f64, Gradients)> {
    let mut tape = Tape::training(&model.store, rng);
    let loss = model.loss(&mut tape, example)?;
    let value = tape.value(loss).data()[0];
    Ok((value, tape.backward(loss)?))
}

/// Batch gradient: mean over examples, reduced in batch order.
pub fn batch_gradients(model: &Model, batch: &[&Example], dropout: &Rng, step: usize) -> Result<(f64, Gradients)> {
    let per_example: Vec<Result<(f64, Gradients)>> = batch
        .par_iter()
        .enumerate()
        .map(|(j, ex)| {
            let mut rng = dropout.fork(((step as u64) << 20) | j as u64);
            example_gradients(model, ex, &mut rng)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Gradients::default();
    for r in per_example {
        let (loss, g) = r?;
        total += loss;
        grads.accumulate(g)?;
    }
    let n = batch.len() as f64;
    grads.scale(1.0 / n);
    Ok((total / n, grads))
}

fn clip(model: &Model, grads: &mut Gradients, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = model
        .store
        .ids()
        .filter_map(|id| grads.get(id))
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Trains in place; `on_step(step, loss)` sees every update.
pub fn train(
    model: &mut Model,
    data: &[Example],
    cfg: &TrainConfig,
    seed: u64,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("train.batch must be positive".into()));
    }
    let root = Rng::new(seed);
    let dropout = root.fork(1);
    let mut opt = cfg.optimizer.build();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        root.fork(2 + epoch as u64).shuffle(&mut order);
        report.epochs_run = epoch + 1;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps() >= m) {
                break 'epochs;
            }
            let batch: Vec<&Example> = chunk.iter().map(|&i| &data[i]).collect();
            let step = report.steps();
            let (loss, mut grads) = batch_gradients(model, &batch, &dropout, step)?;
            if !loss.is_finite() {
                return Err(Error::Internal(format!("loss diverged at step {step}")));
            }
            clip(model, &mut grads, cfg.clip_norm);
            opt.step(&mut model.store, &grads)?;
            report.step_losses.push(loss);
            on_step(step, loss);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::BlockVariant;
    use crate::models::test_configs;
    use crate::models::{Document, Representation};
    use crate::ops::PoolKind;

    fn docs(n: usize, rng: &mut Rng) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = i % 2;
                let base = if label == 0 { b'a' } else { b'n' };
                let bytes = (0..6 + rng.below(6)).map(|_| base + rng.below(8) as u8).collect();
                Example::Document(Document { bytes, label })
            })
            .collect()
    }

    #[test]
    fn loss_drops_and_runs_are_reproducible() {
        let data = docs(32, &mut Rng::new(1));
        let cfg = TrainConfig {
            optimizer: OptimizerKind::adam(0.01),
            batch_size: 8,
            epochs: 10,
            max_steps: Some(30),
            clip_norm: 5.0,
        };
        let mut runs = Vec::new();
        for _ in 0..2 {
            let mut mc = test_configs::docclass(Representation::Conv(BlockVariant::SeparableBottleneckGelu), PoolKind::Max);
            mc.encoder.dropout = 0.1;
            let mut m = crate::models::Model::init(mc, 3).unwrap();
            let r = train(&mut m, &data, &cfg, 7, |_, _| {}).unwrap();
            assert_eq!(r.steps(), 30);
            assert!(r.tail_loss(5) < 0.5 * r.head_loss(5), "{:?}", r.step_losses);
            runs.push((r, m.store));
        }
        assert_eq!(runs[0].0, runs[1].0);
        for id in runs[0].1.ids() {
            assert_eq!(runs[0].1.get(id), runs[1].1.get(id));
        }
    }

    #[test]
    fn empty_training_set_fails_at_train_time() {
        let mut m = crate::models::Model::init(test_configs::docclass(Representation::Recurrent, PoolKind::Avg), 0).unwrap();
        assert!(matches!(
            train(&mut m, &[], &TrainConfig::default(), 0, |_, _| {}),
            Err(Error::Data { .. })
        ));
    }
}
