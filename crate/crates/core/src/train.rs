//! Mini-batch Adam training with early stopping on validation loss.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentConfig};
use crate::dataset::Dataset;
use crate::error::{config_err, Error, Result};
use crate::model::{ModelConfig, Network, Real};
use crate::optim::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub checkpoint_dir: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            learning_rate: 1e-4,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            checkpoint_dir: String::from("checkpoints"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(config_err("train.learning_rate", "must be a finite non-negative number"));
        }
        if self.max_epochs == 0 {
            return Err(config_err("train.max_epochs", "must be positive"));
        }
        if self.patience == 0 {
            return Err(config_err("train.patience", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: f64,
    /// 1-based epoch that produced `best_val_loss` (0 before any epoch).
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochRecord>,
}

impl Default for TrainState {
    fn default() -> Self {
        Self { epoch: 0, best_val_loss: f64::INFINITY, best_epoch: 0, epochs_since_improvement: 0, history: Vec::new() }
    }
}

impl TrainState {
    /// Records one epoch; returns whether validation loss strictly improved.
    pub fn record(&mut self, train_loss: f64, val_loss: f64) -> bool {
        self.epoch += 1;
        self.history.push(EpochRecord { epoch: self.epoch, train_loss, val_loss });
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.best_epoch = self.epoch;
            self.epochs_since_improvement = 0;
            true
        } else {
            self.epochs_since_improvement += 1;
            false
        }
    }
}

/// Anything that can be trained epoch by epoch and snapshotted.
pub trait Fittable {
    type Snapshot;
    /// Runs training epoch `epoch` (0-based) and returns its mean loss.
    fn train_epoch(&mut self, epoch: usize) -> Result<f64>;
    fn validate(&mut self) -> Result<f64>;
    fn snapshot(&self) -> Self::Snapshot;
}

/// Alternates training and validation until `max_epochs` or until
/// `patience` consecutive epochs fail to improve the validation loss.
/// Returns the snapshot taken at the best epoch. `on_epoch` sees the state,
/// the model and whether the epoch improved.
pub fn fit_with<F, C, E>(
    model: &mut F,
    max_epochs: usize,
    patience: usize,
    mut on_epoch: C,
) -> core::result::Result<(F::Snapshot, TrainState), E>
where
    F: Fittable,
    C: FnMut(&TrainState, &F, bool) -> core::result::Result<(), E>,
    E: From<Error>,
{
    let mut state = TrainState::default();
    let mut best = None;
    for epoch in 0..max_epochs {
        let train_loss = model.train_epoch(epoch)?;
        let val_loss = model.validate()?;
        let improved = state.record(train_loss, val_loss);
        if improved {
            best = Some(model.snapshot());
        }
        on_epoch(&state, model, improved)?;
        if state.epochs_since_improvement >= patience {
            break;
        }
    }
    // A validation loss that never compares below infinity (NaN) leaves no best epoch.
    let best = best.ok_or(Error::NonFinite("validation loss"))?;
    Ok((best, state))
}

/// Generator for sample `index` of epoch `epoch`; independent across both.
pub fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

/// Mean objective over `ds` in eval mode.
pub fn validate<T: Real>(net: &Network<T>, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for s in ds.items() {
        total += net.objective(&s.image, &s.mask, None)?;
    }
    Ok(total / ds.len() as f64)
}

/// Network, optimizer and data for one training run.
pub struct Trainer<'a, T: Real = f32> {
    pub net: Network<T>,
    adam: Adam<T>,
    grad: Vec<T>,
    cfg: TrainConfig,
    aug: AugmentConfig,
    train_ds: &'a Dataset,
    val_ds: &'a Dataset,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(
        net: Network<T>,
        cfg: &TrainConfig,
        aug: &AugmentConfig,
        train_ds: &'a Dataset,
        val_ds: &'a Dataset,
    ) -> Result<Self> {
        cfg.validate()?;
        aug.validate()?;
        if train_ds.is_empty() || val_ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = net.n_params();
        Ok(Self {
            adam: Adam::new(n, cfg.learning_rate),
            grad: vec![T::zero(); n],
            net,
            cfg: cfg.clone(),
            aug: aug.clone(),
            train_ds,
            val_ds,
        })
    }

    /// Optimizer updates applied so far.
    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// One shuffled pass in batches of `batch_size` (last batch may be short),
    /// augmenting each sample before its forward pass.
    pub fn run_epoch(&mut self, epoch: usize) -> Result<f64> {
        let n = self.train_ds.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut sample_rng(self.cfg.seed, epoch, u32::MAX as usize));
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            self.grad.iter_mut().for_each(|g| *g = T::zero());
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &self.train_ds.items()[i];
                let mut rng = sample_rng(self.cfg.seed, epoch, i);
                let a = augment::apply(&s.image, &s.mask, &self.aug, &mut rng);
                let eps = self.net.sample_noise(&mut rng);
                total += self.net.objective_and_grad(&a.image, &a.mask, eps.as_deref(), w, &mut self.grad)?;
            }
            self.adam.step(self.net.params_mut(), &self.grad);
        }
        Ok(total / n as f64)
    }
}

impl<T: Real> Fittable for Trainer<'_, T> {
    type Snapshot = Network<T>;

    fn train_epoch(&mut self, epoch: usize) -> Result<f64> {
        self.run_epoch(epoch)
    }

    fn validate(&mut self) -> Result<f64> {
        validate(&self.net, self.val_ds)
    }

    fn snapshot(&self) -> Network<T> {
        self.net.clone()
    }
}

/// Builds a network from `model_cfg` (seeded by `train_cfg.seed`) and trains it.
pub fn fit(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    aug_cfg: &AugmentConfig,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(Network<f32>, TrainState)> {
    let net = Network::build(model_cfg, train_cfg.seed)?;
    let mut trainer = Trainer::new(net, train_cfg, aug_cfg, train_ds, val_ds)?;
    fit_with(&mut trainer, train_cfg.max_epochs, train_cfg.patience, |_, _, _| Ok::<(), Error>(()))
}
