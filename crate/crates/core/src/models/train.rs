//! Training loop and optimizers for the victim models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Tensor};
use crate::signal::Dataset;

use super::{
    forward, init_parameters, labels_of, windows_to_tensor, ForwardOptions, ModelError, ModelSpec,
    Parameters, StatsMode, TrainedModel, RUNNING_MOMENTUM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

/// Training hyperparameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Stop once validation accuracy reaches this level.
    pub early_stop_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 7,
            early_stop_val_acc: Some(0.999),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 && self.early_stop_val_acc.is_none() {
            // 0 epochs is allowed: it yields the random initialization.
        }
        if self.batch_size < 2 {
            return Err(ModelError::Config("batch size must be >= 2".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(ModelError::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Final metrics recorded on a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub epochs_run: usize,
    pub epoch_losses: Vec<f64>,
}

enum Optimizer {
    Adam {
        lr: f64,
        step: u64,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
    SgdMomentum {
        lr: f64,
        velocity: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, params: &Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors
            .iter()
            .map(|t| vec![0.0; if t.trainable { t.tensor.len() } else { 0 }])
            .collect();
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                lr,
                step: 0,
                m: zeros.clone(),
                v: zeros,
            },
            OptimizerKind::SgdMomentum => Optimizer::SgdMomentum { lr, velocity: zeros },
        }
    }

    fn apply(&mut self, params: &mut Parameters, grads: &[Option<Tensor>]) {
        match self {
            Optimizer::Adam { lr, step, m, v } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *step += 1;
                let t = *step as i32;
                let c1 = 1.0 - B1.powi(t);
                let c2 = 1.0 - B2.powi(t);
                for (i, grad) in grads.iter().enumerate() {
                    let Some(g) = grad else { continue };
                    let w = params.tensors[i].tensor.data_mut();
                    let (ms, vs) = (&mut m[i], &mut v[i]);
                    for (((wi, &gi), mi), vi) in w.iter_mut().zip(g.data()).zip(ms.iter_mut()).zip(vs.iter_mut()) {
                        *mi = B1 * *mi + (1.0 - B1) * gi;
                        *vi = B2 * *vi + (1.0 - B2) * gi * gi;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *wi -= *lr * mhat / (vhat.sqrt() + EPS);
                    }
                }
            }
            Optimizer::SgdMomentum { lr, velocity } => {
                const MU: f64 = 0.9;
                for (i, grad) in grads.iter().enumerate() {
                    let Some(g) = grad else { continue };
                    let w = params.tensors[i].tensor.data_mut();
                    let vs = &mut velocity[i];
                    for ((wi, &gi), vi) in w.iter_mut().zip(g.data()).zip(vs.iter_mut()) {
                        *vi = MU * *vi - *lr * gi;
                        *wi += *vi;
                    }
                }
            }
        }
    }
}

/// Train a spec on a dataset. Deterministic for a fixed config seed: data
/// order, initialization and updates all flow from it.
pub fn train(spec: &ModelSpec, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainedModel, ModelError> {
    cfg.validate()?;
    spec.validate()?;
    if dataset.train.is_empty() {
        return Err(ModelError::Config("dataset has no training windows".into()));
    }
    let mut params = init_parameters(spec, cfg.seed)?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &params);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut epochs_run = 0;

    let mut model = TrainedModel {
        spec: spec.clone(),
        params: params.clone(),
        train_seed: cfg.seed,
        metrics: TrainMetrics::default(),
        dn_mode: StatsMode::Batch,
    };

    let mut indices: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xE0C4 + epoch as u64));
        indices.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            // Batch-stat layers need at least two rows.
            if chunk.len() < 2 {
                continue;
            }
            let windows: Vec<_> = chunk.iter().map(|&i| dataset.train[i].clone()).collect();
            let x = windows_to_tensor(&windows);
            let labels = labels_of(&windows);

            let pass = forward(
                spec,
                &params,
                &x,
                ForwardOptions {
                    grad_params: true,
                    grad_input: false,
                    train_stats: true,
                    dn_mode: StatsMode::Batch,
                },
            )
            .map_err(|e| diverged(e, epoch))?;
            let mut g = pass.graph;
            let loss = g
                .softmax_cross_entropy(pass.logits, &labels)
                .map_err(|e| diverged(ModelError::Autodiff(e), epoch))?;
            let loss_value = g.value(loss).item();
            if !loss_value.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    source: AutodiffError::NonFinite { op: "loss" },
                });
            }
            loss_sum += loss_value;
            batches += 1;

            let grads = g.backward(loss).map_err(|e| diverged(ModelError::Autodiff(e), epoch))?;
            let grad_list: Vec<Option<Tensor>> = pass
                .param_nodes
                .iter()
                .map(|n| n.and_then(|id| grads.get(id).cloned()))
                .collect();
            optimizer.apply(&mut params, &grad_list);

            // Fold this batch's statistics into the running averages.
            for (base, stats) in &pass.batch_stats {
                let rm = params.tensors[base + 2].tensor.data_mut();
                for (r, &m) in rm.iter_mut().zip(&stats.mean) {
                    *r = RUNNING_MOMENTUM * *r + (1.0 - RUNNING_MOMENTUM) * m;
                }
                let rv = params.tensors[base + 3].tensor.data_mut();
                for (r, &v) in rv.iter_mut().zip(&stats.var) {
                    *r = RUNNING_MOMENTUM * *r + (1.0 - RUNNING_MOMENTUM) * v;
                }
            }
        }
        let epoch_loss = if batches > 0 { loss_sum / batches as f64 } else { 0.0 };
        epoch_losses.push(epoch_loss);
        epochs_run = epoch + 1;

        model.params = params.clone();
        let val_acc = if dataset.val.is_empty() {
            0.0
        } else {
            model.accuracy(&dataset.val)?
        };
        log::info!(
            "{}: epoch {epoch} loss {epoch_loss:.5} val_acc {val_acc:.4}",
            spec.name
        );
        if let Some(stop) = cfg.early_stop_val_acc {
            if val_acc >= stop {
                break;
            }
        }
    }

    model.params = params;
    model.metrics = TrainMetrics {
        train_acc: model.accuracy(&dataset.train)?,
        val_acc: if dataset.val.is_empty() { 0.0 } else { model.accuracy(&dataset.val)? },
        test_acc: if dataset.test.is_empty() { 0.0 } else { model.accuracy(&dataset.test)? },
        epochs_run,
        epoch_losses,
    };
    Ok(model)
}

fn diverged(e: ModelError, epoch: usize) -> ModelError {
    match e {
        ModelError::Autodiff(source @ AutodiffError::NonFinite { .. }) => {
            ModelError::Diverged { epoch, source }
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synth_dataset, SplitRatios};

    fn tiny_dataset(seed: u64) -> Dataset {
        synth_dataset(20, 2048, SplitRatios::default(), seed).unwrap()
    }

    #[test]
    fn zero_epochs_is_chance_level() {
        let ds = tiny_dataset(3);
        let spec = super::super::build("cnn1d").unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let model = train(&spec, &ds, &cfg).unwrap();
        // Balanced 10-class test set, random init: near 10%.
        assert!(
            (model.metrics.test_acc - 0.1).abs() <= 0.05_f64 + 1e-9,
            "got {}",
            model.metrics.test_acc
        );
        assert_eq!(model.metrics.epochs_run, 0);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let ds = tiny_dataset(5);
        let spec = super::super::build("cnn1d").unwrap();
        let cfg = TrainConfig { epochs: 2, early_stop_val_acc: None, ..Default::default() };
        let a = train(&spec, &ds, &cfg).unwrap();
        let b = train(&spec, &ds, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics.epoch_losses, b.metrics.epoch_losses);
    }

    #[test]
    fn loss_decreases_on_learnable_data() {
        let ds = tiny_dataset(11);
        let spec = super::super::build("cnn1d").unwrap();
        let cfg = TrainConfig { epochs: 4, early_stop_val_acc: None, ..Default::default() };
        let model = train(&spec, &ds, &cfg).unwrap();
        let losses = &model.metrics.epoch_losses;
        assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    }

    #[test]
    fn rejects_tiny_batch_size() {
        let ds = tiny_dataset(1);
        let spec = super::super::build("cnn1d").unwrap();
        let cfg = TrainConfig { batch_size: 1, ..Default::default() };
        assert!(matches!(train(&spec, &ds, &cfg), Err(ModelError::Config(_))));
    }
}
