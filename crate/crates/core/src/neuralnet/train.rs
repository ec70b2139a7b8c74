use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::compute::Workspace;
use super::eval::score;
use super::{argmax, check_data, Architecture, NetError, WeightSet};
use crate::dataset::Dataset;
use crate::rng::SeededRng;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 8,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for (i, r) in self.epochs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                r.train_loss,
                r.train_accuracy,
                r.val_loss,
                r.val_accuracy
            );
        }
        out
    }
}

/// Mini-batch SGD with momentum on categorical cross-entropy.
///
/// The visiting order is reshuffled every epoch from one stream seeded by
/// `cfg.seed`; the last short batch is kept. Train metrics are averaged over
/// the forward passes made during the epoch, validation metrics are taken on
/// `val` after it. Velocity starts at zero on every call.
pub fn train_local<T: Scalar>(
    arch: &Architecture,
    weights: &WeightSet<T>,
    shard: &Dataset<T>,
    val: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(WeightSet<T>, TrainHistory), NetError> {
    weights.check(arch)?;
    check_data(arch, shard)?;
    check_data(arch, val)?;
    if shard.is_empty() || val.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if cfg.epochs == 0 {
        return Err(NetError::InvalidTraining(
            "epochs must be at least 1".into(),
        ));
    }
    if cfg.batch == 0 || cfg.batch > shard.len() {
        return Err(NetError::InvalidTraining(format!(
            "batch {} outside 1..={}",
            cfg.batch,
            shard.len()
        )));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(NetError::InvalidTraining(format!(
            "lr {} must be positive and momentum {} in [0, 1)",
            cfg.lr, cfg.momentum
        )));
    }

    let lr = T::of(cfg.lr);
    let mu = T::of(cfg.momentum);
    let mut weights = weights.clone();
    let mut velocity = WeightSet::zeros(arch);
    let mut grads = WeightSet::zeros(arch);
    let mut ws = Workspace::new(arch);
    let mut rng = SeededRng::new(cfg.seed);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            for t in grads.tensors_mut() {
                t.values.fill(T::zero());
            }
            let mut batch_loss = 0.0;
            for &i in batch {
                let label = shard.label(i);
                ws.forward(arch, &weights, shard.row(i));
                batch_loss += ws.loss(label).to_f64().unwrap_or(f64::NAN);
                if argmax(ws.probabilities()) == label {
                    correct += 1;
                }
                ws.backward(arch, &weights, label, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(NetError::NonFinite {
                    what: "loss",
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
            loss_sum += batch_loss;

            let scale = T::one() / T::of(batch.len() as f64);
            for ((w, v), g) in weights
                .tensors_mut()
                .iter_mut()
                .zip(velocity.tensors_mut())
                .zip(grads.tensors())
            {
                for ((wv, vv), &gv) in w.values.iter_mut().zip(v.values.iter_mut()).zip(&g.values) {
                    *vv = mu * *vv - lr * gv * scale;
                    *wv += *vv;
                }
            }
            if !weights.all_finite() {
                return Err(NetError::NonFinite {
                    what: "weights",
                    epoch: epoch + 1,
                    batch: b + 1,
                });
            }
        }
        let (val_loss, val_report) = score(arch, &weights, val)?;
        history.epochs.push(EpochRecord {
            train_loss: loss_sum / shard.len() as f64,
            train_accuracy: correct as f64 / shard.len() as f64,
            val_loss,
            val_accuracy: val_report.accuracy,
        });
    }
    Ok((weights, history))
}
