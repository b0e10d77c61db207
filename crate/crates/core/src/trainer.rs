//! Mini-batch training with Adam, early stopping and k-fold splits.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{child_seed, Sample};
use crate::error::{ensure, Error, Result};
use crate::layers::bce_value;
use crate::network::{Gradients, Model};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without a `min_delta` improvement of the validation loss
    /// before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 200,
            batch_size: 8,
            learning_rate: 1e-3,
            patience: 20,
            min_delta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Post-pruning schedule: same optimiser, at most 100 epochs.
    pub fn retrain(seed: u64) -> Self {
        TrainConfig {
            max_epochs: 100,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.max_epochs >= 1, "max_epochs must be at least 1");
        ensure!(self.patience >= 1, "patience must be at least 1");
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            self.learning_rate >= 0.0 && self.learning_rate.is_finite(),
            "learning rate must be finite and non-negative"
        );
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "moment decays must lie in [0, 1)"
        );
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// `epoch,train_loss,val_loss` with one row per epoch (1-based).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for (i, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            let _ = writeln!(s, "{},{:.8},{:.8}", i + 1, t, v);
        }
        s
    }
}

struct Adam<T> {
    m: Gradients<T>,
    v: Gradients<T>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(model: &Model<T>) -> Self {
        Adam {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut Model<T>, g: &Gradients<T>, cfg: &TrainConfig) {
        self.step += 1;
        let b1 = T::from_f64_lossy(cfg.beta1);
        let b2 = T::from_f64_lossy(cfg.beta2);
        let one = T::one();
        let lr = cfg.learning_rate;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        // bias corrections folded into the step size
        let alpha = T::from_f64_lossy(lr * c2.sqrt() / c1);
        let eps = T::from_f64_lossy(cfg.epsilon * c2.sqrt());
        let kernels = &mut model.weights_mut().kernels;
        for (k, kernel) in kernels.iter_mut().enumerate() {
            let (w, b) = kernel.params_mut();
            for (params, grads, m, v) in [
                (w, &g.weights[k], &mut self.m.weights[k], &mut self.v.weights[k]),
                (b, &g.biases[k], &mut self.m.biases[k], &mut self.v.biases[k]),
            ] {
                for (((p, &gi), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (one - b1) * gi;
                    *vi = b2 * *vi + (one - b2) * gi * gi;
                    *p -= alpha * *mi / (vi.sqrt() + eps);
                }
            }
        }
    }
}

/// Mean BCE of the model over a set of samples.
pub fn mean_loss<T: Scalar>(model: &Model<T>, samples: &[Sample]) -> Result<f64> {
    ensure!(!samples.is_empty(), "cannot evaluate loss on an empty set");
    let mut total = 0.0;
    for s in samples {
        let out = model.forward(&s.image.cast())?;
        total += bce_value(&out, &s.masks.cast())?;
    }
    Ok(total / samples.len() as f64)
}

/// Per-epoch progress passed to the observer of [`train_with_observer`].
#[derive(Debug, Clone, Copy)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
}

pub fn train<T: Scalar>(
    model: &Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<(Model<T>, TrainHistory)> {
    train_with_observer(model, train_set, val_set, config, |_| {})
}

/// Trains from `model`'s weights and returns the weights of the epoch with
/// the lowest validation loss (training loss when `val_set` is empty).
///
/// Training stops after `max_epochs`, or once the validation loss has not
/// improved by `min_delta` for `patience` consecutive epochs.
pub fn train_with_observer<T: Scalar>(
    model: &Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochReport),
) -> Result<(Model<T>, TrainHistory)> {
    config.validate()?;
    ensure!(!train_set.is_empty(), "training set is empty");
    for s in train_set.iter().chain(val_set) {
        model.spec().check_input_size(s.height(), s.width())?;
    }

    let mut current = model.clone();
    let mut adam = Adam::new(&current);
    let mut grads = Gradients::zeros_like(&current);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut best = (f64::INFINITY, 0usize, current.clone());
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };

    for epoch in 0..config.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(config.seed, 0x7EA1, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            grads.clear();
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train_set[i];
                batch_loss += current.loss_and_accumulate(&s.image.cast(), &s.masks.cast(), &mut grads)?;
            }
            if !batch_loss.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            grads.scale(T::one() / T::from_f64_lossy(batch.len() as f64));
            adam.update(&mut current, &grads, config);
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            mean_loss(&current, val_set)?
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, step: 0 });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);

        if val_loss < best.0 {
            best = (val_loss, epoch, current.clone());
        }
        if val_loss < reference - config.min_delta {
            reference = val_loss;
            stale = 0;
        } else {
            stale += 1;
        }
        observe(&EpochReport {
            epoch,
            train_loss,
            val_loss,
            best_epoch: best.1,
        });
        if stale >= config.patience {
            history.stop_reason = StopReason::Converged;
            break;
        }
    }
    history.best_epoch = best.1;
    Ok((best.2, history))
}

/// Fine-tunes a pruned model. `max_epochs == 0` returns it unchanged.
pub fn retrain_after_prune<T: Scalar>(
    pruned: &Model<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    observe: impl FnMut(&EpochReport),
) -> Result<(Model<T>, TrainHistory)> {
    if config.max_epochs == 0 {
        return Ok((
            pruned.clone(),
            TrainHistory {
                train_loss: Vec::new(),
                val_loss: Vec::new(),
                best_epoch: 0,
                stop_reason: StopReason::MaxEpochs,
            },
        ));
    }
    let (model, history) = train_with_observer(pruned, train_set, val_set, config, observe)?;
    debug_assert_eq!(model.spec(), pruned.spec());
    Ok((model, history))
}

/// One cross-validation round: indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` and cuts it into `k` test folds whose sizes differ by at
/// most one; each fold trains on the complement.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    ensure!(k >= 2, "k-fold needs k >= 2, got {k}");
    ensure!(n >= k, "cannot split {n} samples into {k} folds");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut test = idx[start..start + len].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = idx[..start].iter().chain(&idx[start + len..]).copied().collect();
        train.sort_unstable();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}
