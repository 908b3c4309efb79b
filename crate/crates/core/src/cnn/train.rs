use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backprop::{evaluate_loss, loss_and_gradients, Gradients};
use super::model::CnnModel;
use super::scalar::Scalar;
use crate::dataset::PatchPair;
use crate::error::{Error, Result};

/// Minibatch SGD settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Evaluate the gradient at the look-ahead point `w + momentum * v`.
    pub nesterov: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop as soon as the validation loss rises and keep the previous epoch.
    pub early_stop: bool,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            nesterov: true,
            batch_size: 50,
            max_epochs: 30,
            early_stop: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("need at least one epoch".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the minibatch losses seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned (0 means the initial weights).
    pub returned_epoch: usize,
    pub stopped_early: bool,
}

/// Velocity buffers for momentum SGD, one per parameter slice.
struct Momentum<T> {
    velocity: Gradients<T>,
}

impl<T: Scalar> Momentum<T> {
    fn new(model: &CnnModel<T>) -> Self {
        Self {
            velocity: Gradients::zeros_like(model),
        }
    }

    /// `w + momentum * v`.
    fn look_ahead(&self, model: &CnnModel<T>, momentum: T) -> CnnModel<T> {
        let mut ahead = model.clone();
        for (layer, v) in ahead.layers_mut().iter_mut().zip(&self.velocity.layers) {
            for (w, &dv) in layer.weights.iter_mut().zip(&v.weights) {
                *w = *w + momentum * dv;
            }
            for (b, &dv) in layer.biases.iter_mut().zip(&v.biases) {
                *b = *b + momentum * dv;
            }
        }
        ahead
    }

    /// `v <- momentum v - lr g; w <- w + v`.
    fn apply(&mut self, model: &mut CnnModel<T>, grads: &Gradients<T>, lr: T, momentum: T) {
        for ((layer, v), g) in model
            .layers_mut()
            .iter_mut()
            .zip(self.velocity.layers.iter_mut())
            .zip(&grads.layers)
        {
            for ((w, dv), &gw) in layer.weights.iter_mut().zip(v.weights.iter_mut()).zip(&g.weights) {
                *dv = momentum * *dv - lr * gw;
                *w = *w + *dv;
            }
            for ((b, dv), &gb) in layer.biases.iter_mut().zip(v.biases.iter_mut()).zip(&g.biases) {
                *dv = momentum * *dv - lr * gb;
                *b = *b + *dv;
            }
        }
    }
}

/// Trains with minibatch SGD and early stopping on the mean squared error
/// over `val_set`.
pub fn train<T: Scalar>(
    model: CnnModel<T>,
    train_set: &[PatchPair],
    val_set: &[PatchPair],
    cfg: &TrainConfig,
) -> Result<(CnnModel<T>, TrainHistory)> {
    if val_set.is_empty() {
        return Err(Error::InvalidParameter("validation set is empty".into()));
    }
    train_with_validator(model, train_set, cfg, |m| evaluate_loss(m, val_set))
}

/// Like [`train`], with the validation loss supplied by `validate`, called
/// once before training and once after every epoch.
pub fn train_with_validator<T: Scalar>(
    mut model: CnnModel<T>,
    train_set: &[PatchPair],
    cfg: &TrainConfig,
    mut validate: impl FnMut(&CnnModel<T>) -> Result<f64>,
) -> Result<(CnnModel<T>, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let lr = T::from(cfg.learning_rate).unwrap();
    let momentum = T::from(cfg.momentum).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut optimizer = Momentum::new(&model);
    let mut history = TrainHistory {
        initial_val_loss: validate(&model)?,
        ..TrainHistory::default()
    };
    let mut previous: Option<(CnnModel<T>, f64)> = None;
    let mut batch = Vec::with_capacity(cfg.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, grads) = if cfg.nesterov {
                let ahead = optimizer.look_ahead(&model, momentum);
                loss_and_gradients(&ahead, &batch)?
            } else {
                loss_and_gradients(&model, &batch)?
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            optimizer.apply(&mut model, &grads, lr, momentum);
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = validate(&model)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: batches,
                loss: val_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
        });
        if cfg.early_stop {
            if let Some((snapshot, prev_loss)) = previous.take() {
                if val_loss > prev_loss {
                    history.returned_epoch = epoch - 1;
                    history.stopped_early = true;
                    return Ok((snapshot, history));
                }
            }
            previous = Some((model.clone(), val_loss));
        }
        history.returned_epoch = epoch;
    }
    Ok((model, history))
}
