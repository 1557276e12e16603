//! Conventional poisoning comparators. Neither respects a stealth radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ModelParams, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GaussianNoise { sigma: f64 },
    SignFlip { scale: f64 },
}

/// `global_prev + sigma * g`, `g` i.i.d. standard normal.
pub fn gaussian_noise_attack(global_prev: &ModelParams, sigma: f64, rng: &mut RngStream) -> Result<ModelParams> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    ModelParams::new(
        global_prev
            .as_slice()
            .iter()
            .map(|v| v + sigma * rng.standard_normal())
            .collect(),
    )
}

/// `-scale * overheard_mean`.
pub fn sign_flip_attack(overheard_mean: &ModelParams, scale: f64) -> Result<ModelParams> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    Ok(overheard_mean.scale(-scale))
}
