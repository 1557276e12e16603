//! Server-side sample-weighted aggregation and broadcast.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_dims, ModelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportedUpdate {
    pub device_id: usize,
    pub params: ModelParams,
    /// Sample count the device claims; the server cannot verify it.
    pub reported_samples: u64,
    /// Ground truth for bookkeeping. The server never reads this.
    pub is_malicious: bool,
}

/// Per-update weights `reported_samples / Σ reported_samples`, in ascending
/// `device_id` order.
pub fn aggregation_weights(updates: &[ReportedUpdate]) -> Result<Vec<(usize, f64)>> {
    if updates.is_empty() {
        return Err(Error::Empty("update set"));
    }
    if let Some(u) = updates.iter().find(|u| u.reported_samples == 0) {
        return Err(Error::InvalidArgument(format!(
            "device {} reported zero samples",
            u.device_id
        )));
    }
    let total: f64 = updates.iter().map(|u| u.reported_samples as f64).sum();
    let mut w: Vec<(usize, f64)> = updates
        .iter()
        .map(|u| (u.device_id, u.reported_samples as f64 / total))
        .collect();
    w.sort_by_key(|&(id, _)| id);
    Ok(w)
}

/// `Σ (B_i / B) ω_i` with `B = Σ B_i`, summed in ascending device-id order so
/// the result does not depend on arrival order.
pub fn aggregate(updates: &[ReportedUpdate]) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(Error::Empty("update set"));
    }
    let dim = updates[0].params.dim();
    for u in updates {
        check_dims(dim, u.params.dim())?;
    }
    let mut ordered: Vec<&ReportedUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.device_id);

    let total: f64 = ordered.iter().map(|u| u.reported_samples as f64).sum();
    if ordered.iter().any(|u| u.reported_samples == 0) {
        return Err(Error::InvalidArgument("reported_samples must be at least 1".into()));
    }
    let mut acc = vec![0.0; dim];
    for u in ordered {
        let weight = u.reported_samples as f64 / total;
        for (a, v) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += weight * v;
        }
    }
    ModelParams::new(acc)
}

/// One independent copy of the global model per device.
pub fn broadcast(global: &ModelParams, device_count: usize) -> Vec<ModelParams> {
    vec![global.clone(); device_count]
}
