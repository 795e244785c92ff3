//! Full-batch gradient descent over any model exposing a flat parameter
//! vector, plus finite-difference gradient validation.

use log::{debug, info};
use nalgebra::DVector;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input/reference sequence pair, both of length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub inputs: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
}

/// Weight that turns a summed squared error over `batch` into a mean over
/// every scalar output entry.
pub(crate) fn batch_weight(batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let entries: usize = batch.iter().flat_map(|s| s.targets.iter()).map(|y| y.len()).sum();
    if entries == 0 {
        return Err(Error::Domain("batch has no target entries".into()));
    }
    Ok(1.0 / entries as f64)
}

pub trait Trainable {
    fn num_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, values: &[f64]);
    /// Mean squared error over all target entries of the batch.
    fn loss(&self, batch: &[Sample]) -> Result<f64>;
    fn loss_and_grad(&self, batch: &[Sample]) -> Result<(f64, Vec<f64>)>;

    fn gamma_m(&self) -> Option<f64> {
        None
    }

    fn certificate_min_eigenvalue(&self) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    ReverseMode,
    CentralFiniteDifference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_gradient_method")]
    pub gradient_method: GradientMethod,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "train_gamma_M", alias = "train_gamma_m")]
    pub train_gamma_m: bool,
}

fn default_learning_rate() -> f64 {
    1e-2
}

fn default_epochs() -> usize {
    500
}

fn default_gradient_method() -> GradientMethod {
    GradientMethod::ReverseMode
}

fn default_fd_step() -> f64 {
    1e-5
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: default_learning_rate(),
            epochs: default_epochs(),
            gradient_method: default_gradient_method(),
            fd_step: default_fd_step(),
            seed: 0,
            train_gamma_m: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::Config(format!("fd_step must be positive, got {}", self.fd_step)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss of the parameters the epoch started from.
    pub train_loss: f64,
    /// Validation loss after the update.
    pub val_loss: Option<f64>,
    pub gamma_m: Option<f64>,
    /// Smallest eigenvalue of the dissipation certificate after the update.
    pub min_certificate_eigenvalue: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub history: Vec<EpochRecord>,
}

impl TrainingReport {
    pub fn train_losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.train_loss).collect()
    }
}

/// Central differences of the batch loss along every coordinate.
pub fn central_difference_gradient<M: Trainable + Clone>(model: &M, batch: &[Sample], step: f64) -> Result<Vec<f64>> {
    let x = model.params();
    let mut probe = model.clone();
    let mut grad = Vec::with_capacity(x.len());
    let mut xs = x.clone();
    for k in 0..x.len() {
        xs[k] = x[k] + step;
        probe.set_params(&xs);
        let plus = probe.loss(batch)?;
        xs[k] = x[k] - step;
        probe.set_params(&xs);
        let minus = probe.loss(batch)?;
        xs[k] = x[k];
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between `grad` and central differences of `f` at
/// `x`, over the listed coordinates. The denominator is floored at `1e-6`.
pub fn compare_gradients<F>(x: &[f64], grad: &[f64], coords: &[usize], step: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if grad.len() != x.len() {
        return Err(Error::shape("gradient", x.len(), grad.len()));
    }
    let mut xs = x.to_vec();
    let mut worst = 0.0f64;
    for &k in coords {
        if k >= x.len() {
            return Err(Error::Index { index: k, len: x.len() });
        }
        xs[k] = x[k] + step;
        let plus = f(&xs)?;
        xs[k] = x[k] - step;
        let minus = f(&xs)?;
        xs[k] = x[k];
        worst = worst.max(relative_error(grad[k], (plus - minus) / (2.0 * step)));
    }
    Ok(worst)
}

/// Reverse-mode gradient against central differences on `coords` randomly
/// chosen coordinates (all of them when the model is smaller).
pub fn gradient_check<M: Trainable + Clone>(
    model: &M,
    batch: &[Sample],
    fd_step: f64,
    coords: usize,
    seed: u64,
) -> Result<f64> {
    let (_, grad) = model.loss_and_grad(batch)?;
    let n = model.num_params();
    let picked: Vec<usize> = if coords >= n {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, n, coords).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = model.clone();
    compare_gradients(&model.params(), &grad, &picked, fd_step, |p| {
        probe.set_params(p);
        probe.loss(batch)
    })
}

pub fn train<M: Trainable + Clone>(
    model: &mut M,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainingConfig,
) -> Result<TrainingReport> {
    train_with(model, train_set, val_set, cfg, 0, |_, _| Ok(()))
}

/// Runs epochs `start_epoch + 1 ..= cfg.epochs`, calling `on_epoch` with the
/// updated model after each one.
pub fn train_with<M, F>(
    model: &mut M,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &TrainingConfig,
    start_epoch: usize,
    mut on_epoch: F,
) -> Result<TrainingReport>
where
    M: Trainable + Clone,
    F: FnMut(&M, &EpochRecord) -> Result<()>,
{
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let mut report = TrainingReport::default();
    for epoch in start_epoch + 1..=cfg.epochs {
        let (loss, grad) = match cfg.gradient_method {
            GradientMethod::ReverseMode => model.loss_and_grad(train_set)?,
            GradientMethod::CentralFiniteDifference => {
                (model.loss(train_set)?, central_difference_gradient(model, train_set, cfg.fd_step)?)
            }
        };
        let diverged = Error::Divergence {
            epoch,
            learning_rate: cfg.learning_rate,
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(diverged);
        }
        let mut p = model.params();
        for (x, g) in p.iter_mut().zip(&grad) {
            *x -= cfg.learning_rate * g;
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(diverged);
        }
        model.set_params(&p);
        let val_loss = if val_set.is_empty() {
            None
        } else {
            let v = model.loss(val_set)?;
            if !v.is_finite() {
                return Err(diverged);
            }
            Some(v)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss,
            val_loss,
            gamma_m: model.gamma_m(),
            min_certificate_eigenvalue: model.certificate_min_eigenvalue()?,
        };
        debug!("epoch {epoch}: train {loss:.6e} val {val_loss:?}");
        on_epoch(model, &record)?;
        report.history.push(record);
    }
    if let Some(last) = report.history.last() {
        info!("finished epoch {} with training loss {:.6e}", last.epoch, last.train_loss);
    }
    Ok(report)
}
