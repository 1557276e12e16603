//! Per-sample losses, the L2-regularized local objective and the local
//! gradient-descent loop run by each benign device.

use serde::{Deserialize, Serialize};

use crate::data::{LocalDataset, Sample};
use crate::error::{Error, Result};
use crate::numerics::{check_dims, dot, ModelParams, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    LinearRegression,
    LogisticRegression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    FullBatch,
    Minibatch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub alpha: f64,
    pub learning_rate: f64,
    pub local_iterations: usize,
    pub batch: BatchMode,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            learning_rate: 0.1,
            local_iterations: 5,
            batch: BatchMode::FullBatch,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.local_iterations == 0 {
            return Err(Error::InvalidArgument("local_iterations must be at least 1".into()));
        }
        if self.batch == BatchMode::Minibatch(0) {
            return Err(Error::InvalidArgument("minibatch size must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

pub fn sample_loss(kind: LossKind, w: &ModelParams, s: &Sample) -> Result<f64> {
    check_dims(w.dim(), s.x.len())?;
    Ok(sample_loss_unchecked(kind, w.as_slice(), s))
}

fn sample_loss_unchecked(kind: LossKind, w: &[f64], s: &Sample) -> f64 {
    let z = dot(w, &s.x);
    match kind {
        LossKind::LinearRegression => 0.5 * (z - s.y) * (z - s.y),
        // y·log(1+e^{-z}) − (1−y)·log(1−σ(z)) == y·softplus(−z) + (1−y)·softplus(z)
        LossKind::LogisticRegression => s.y * softplus(-z) + (1.0 - s.y) * softplus(z),
    }
}

/// d f_c / d(w·x).
fn sample_residual(kind: LossKind, w: &[f64], s: &Sample) -> f64 {
    let z = dot(w, &s.x);
    match kind {
        LossKind::LinearRegression => z - s.y,
        LossKind::LogisticRegression => sigmoid(z) - s.y,
    }
}

fn regularizer(w: &[f64]) -> f64 {
    0.5 * dot(w, w)
}

fn check_dataset(w: &ModelParams, ds: &LocalDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Empty("local dataset"));
    }
    check_dims(w.dim(), ds.feature_dim())
}

/// Mean sample loss plus `alpha * ||w||^2 / 2`.
pub fn local_loss(kind: LossKind, w: &ModelParams, ds: &LocalDataset, alpha: f64) -> Result<f64> {
    check_dataset(w, ds)?;
    Ok(loss_over(kind, w.as_slice(), &ds.samples, alpha))
}

fn loss_over(kind: LossKind, w: &[f64], samples: &[Sample], alpha: f64) -> f64 {
    let sum: f64 = samples.iter().map(|s| sample_loss_unchecked(kind, w, s)).sum();
    sum / samples.len() as f64 + alpha * regularizer(w)
}

pub fn local_gradient(kind: LossKind, w: &ModelParams, ds: &LocalDataset, alpha: f64) -> Result<ModelParams> {
    check_dataset(w, ds)?;
    Ok(ModelParams::from_vec(gradient_over(
        kind,
        w.as_slice(),
        ds.samples.iter(),
        ds.len(),
        alpha,
    )))
}

fn gradient_over<'a>(
    kind: LossKind,
    w: &[f64],
    samples: impl Iterator<Item = &'a Sample>,
    count: usize,
    alpha: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for s in samples {
        let r = sample_residual(kind, w, s);
        for (gk, xk) in g.iter_mut().zip(&s.x) {
            *gk += r * xk;
        }
    }
    let inv = 1.0 / count as f64;
    g.iter_mut()
        .zip(w)
        .for_each(|(gk, wk)| *gk = *gk * inv + alpha * wk);
    g
}

/// Runs `local_iterations` plain gradient-descent steps from `w_init`.
pub fn train_local(
    kind: LossKind,
    w_init: &ModelParams,
    ds: &LocalDataset,
    settings: &TrainSettings,
    rng: &mut RngStream,
) -> Result<ModelParams> {
    train_local_traced(kind, w_init, ds, settings, rng).map(|(w, _)| w)
}

/// Like [`train_local`], also returning the full-dataset loss before each
/// step and after the last one (`local_iterations + 1` entries).
pub fn train_local_traced(
    kind: LossKind,
    w_init: &ModelParams,
    ds: &LocalDataset,
    settings: &TrainSettings,
    rng: &mut RngStream,
) -> Result<(ModelParams, Vec<f64>)> {
    settings.validate()?;
    check_dataset(w_init, ds)?;
    let mut w = w_init.as_slice().to_vec();
    let mut losses = Vec::with_capacity(settings.local_iterations + 1);

    for iteration in 0..=settings.local_iterations {
        let loss = loss_over(kind, &w, &ds.samples, settings.alpha);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration });
        }
        losses.push(loss);
        if iteration == settings.local_iterations {
            break;
        }
        let g = match settings.batch {
            BatchMode::FullBatch => gradient_over(kind, &w, ds.samples.iter(), ds.len(), settings.alpha),
            BatchMode::Minibatch(size) => {
                let size = size.min(ds.len());
                let picked = rand::seq::index::sample(rng, ds.len(), size);
                gradient_over(
                    kind,
                    &w,
                    picked.iter().map(|k| &ds.samples[k]),
                    size,
                    settings.alpha,
                )
            }
        };
        for (wk, gk) in w.iter_mut().zip(&g) {
            *wk -= settings.learning_rate * gk;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDiverged {
            iteration: settings.local_iterations,
        });
    }
    Ok((ModelParams::from_vec(w), losses))
}
