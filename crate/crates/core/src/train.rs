//! Mini-batch training with Adam and early stopping on validation loss.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoders::Mode;
use crate::error::{Error, Result};
use crate::model::{FusionModel, Sample};
use crate::scalar::Real;
use crate::seed::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 150,
            patience: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Losses after an epoch. Epoch 0 is the untrained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: FusionModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// A run that hit a numerical failure. `last_good` holds the parameters from
/// the best epoch seen before the failure.
#[derive(Debug)]
pub struct TrainFailure<T> {
    pub error: Error,
    pub last_good: FusionModel<T>,
    pub history: Vec<EpochRecord>,
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let lr = T::lit(cfg.learning_rate);
        let eps = T::lit(cfg.epsilon);
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Trains `model`; the shuffling and dropout streams derive from `seed`.
pub fn train<T: Real>(
    model: FusionModel<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>, Box<TrainFailure<T>>> {
    train_observed(model, train_set, val_set, cfg, seed, |_, _| {})
}

/// [`train`] with a callback receiving each epoch's record and parameters.
pub fn train_observed<T: Real>(
    model: FusionModel<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    cfg: &TrainConfig,
    seed: u64,
    mut observe: impl FnMut(&EpochRecord, &FusionModel<T>),
) -> Result<TrainOutcome<T>, Box<TrainFailure<T>>> {
    let fail = |error, last_good, history| Box::new(TrainFailure { error, last_good, history });
    if let Err(e) = cfg.validate() {
        return Err(fail(e, model, Vec::new()));
    }
    if train_set.is_empty() || val_set.is_empty() {
        let e = Error::Data("training and validation sets must be non-empty".into());
        return Err(fail(e, model, Vec::new()));
    }

    let mut shuffle_rng = substream(seed, "shuffle");
    let mut dropout_rng = substream(seed, "dropout");
    let mut adam = Adam::new(model.params().len());
    let mut history = Vec::new();

    let initial = match epoch_losses(&model, train_set, val_set, 0) {
        Ok(r) => r,
        Err(e) => return Err(fail(e, model, history)),
    };
    let mut best_val = initial.val_loss;
    history.push(initial);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut current = model;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;
    let mut step = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<T>> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            step += 1;
            let grad = match current.loss_and_grad(&batch, Mode::Train(&mut dropout_rng)) {
                Ok((_, g)) if g.iter().all(|v| v.is_finite()) => g,
                Ok((loss, _)) => {
                    let e = Error::Diverged { epoch, step, loss: loss.approx() };
                    return Err(fail(e, best, history));
                }
                Err(Error::NonFinite(_)) => {
                    let e = Error::Diverged { epoch, step, loss: f64::NAN };
                    return Err(fail(e, best, history));
                }
                Err(e) => return Err(fail(e, best, history)),
            };
            adam.step(current.params_mut().values_mut(), &grad, cfg);
            if !current.params().is_finite() {
                let e = Error::Diverged { epoch, step, loss: f64::NAN };
                return Err(fail(e, best, history));
            }
        }
        let record = match epoch_losses(&current, train_set, val_set, epoch) {
            Ok(r) => r,
            Err(e) => return Err(fail(e, best, history)),
        };
        log::debug!(
            "epoch {epoch}: train {:.6} val {:.6}",
            record.train_loss,
            record.val_loss
        );
        observe(&record, &current);
        let val = record.val_loss;
        history.push(record);
        if !val.is_finite() {
            let e = Error::Diverged { epoch, step, loss: val };
            return Err(fail(e, best, history));
        }
        if val < best_val {
            best_val = val;
            best = current.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch,
        stopped_early,
    })
}

fn epoch_losses<T: Real>(
    model: &FusionModel<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    epoch: usize,
) -> Result<EpochRecord> {
    Ok(EpochRecord {
        epoch,
        train_loss: model.mean_loss(train_set)?.approx(),
        val_loss: model.mean_loss(val_set)?.approx(),
    })
}
