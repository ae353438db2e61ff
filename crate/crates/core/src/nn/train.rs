//! Mini-batch training with a seeded per-epoch shuffle.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::cross_entropy;
use super::model::{argmax, Model, NUM_CLASSES};
use super::NnError;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub input_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            input_size: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.into()));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 || self.input_size == 0 {
            return bad("batch_size and input_size must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Preloaded, normalized model inputs with labels.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub sample_len: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(sample_len: usize) -> Self {
        Dataset {
            sample_len,
            inputs: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, input: &[f32], label: usize) {
        assert_eq!(input.len(), self.sample_len, "sample length");
        self.inputs.extend_from_slice(input);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Optimizer steps taken so far, over all epochs.
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

impl TrainLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.accuracy)
    }
}

pub fn fit(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog, NnError> {
    fit_with(model, data, cfg, |_| {})
}

/// Trains in place. Loss and accuracy per epoch are measured on the batches
/// as they are seen, before each update.
pub fn fit_with(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainLog, NnError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NnError::InvalidConfig("training set is empty".into()));
    }
    if data.sample_len != model.input_len() {
        return Err(NnError::ShapeMismatch(format!(
            "samples have {} values, model expects {}",
            data.sample_len,
            model.input_len()
        )));
    }
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut log = TrainLog::default();
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size * data.sample_len);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &format!("shuffle/epoch{epoch}")));
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for idx in order.chunks(cfg.batch_size) {
            let wrap = |e: NnError| NnError::Train { epoch, step, source: Box::new(e) };
            batch.clear();
            for &i in idx {
                batch.extend_from_slice(data.sample(i));
            }
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let fwd = model.forward_cached(&batch, idx.len()).map_err(wrap)?;
            let (loss, dlogits) = cross_entropy(fwd.probs(), &labels, NUM_CLASSES).map_err(wrap)?;
            loss_sum += loss as f64 * idx.len() as f64;
            correct += fwd
                .probs()
                .chunks(NUM_CLASSES)
                .zip(&labels)
                .filter(|(p, &l)| argmax(p) == l)
                .count();
            let grads = model.backward(&batch, &fwd, &dlogits).map_err(wrap)?;
            adam_step(&mut model.params_mut(), &grads, &mut state, &adam);
            step += 1;
        }
        let stats = EpochStats {
            epoch,
            step,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        on_epoch(&stats);
        log.epochs.push(stats);
    }
    Ok(log)
}

/// Accuracy of `model` on `data` in evaluation mode.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64, NnError> {
    let mut correct = 0;
    for i in 0..data.len() {
        if model.predict(data.sample(i), 1)?[0] == data.labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelSpec;
    use rand::Rng;

    fn toy(n: usize, size: usize) -> Dataset {
        let mut r = rng::stream(1, "toy");
        let mut d = Dataset::new(3 * size * size);
        for i in 0..n {
            let x: Vec<f32> = (0..3 * size * size).map(|_| r.random_range(0.0..1.0)).collect();
            d.push(&x, i % 3);
        }
        d
    }

    #[test]
    fn zero_lr_keeps_init() {
        let mut m = Model::new(ModelSpec::tiny_road_net(8), 2).unwrap();
        let init = m.param_bytes();
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch_size: 2, input_size: 8, ..Default::default() };
        fit(&mut m, &toy(5, 8), &cfg).unwrap();
        assert_eq!(m.param_bytes(), init);
    }

    #[test]
    fn same_seed_same_curve() {
        let cfg = TrainConfig { lr: 1e-3, epochs: 3, batch_size: 2, input_size: 8, seed: 5, ..Default::default() };
        let run = || {
            let mut m = Model::new(ModelSpec::tiny_road_net(8), 5).unwrap();
            let log = fit(&mut m, &toy(6, 8), &cfg).unwrap();
            (log, m.param_bytes())
        };
        assert_eq!(run(), run());
        assert_eq!(run().0.epochs.last().unwrap().step, 9);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { beta1: 1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { lr: -1.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
