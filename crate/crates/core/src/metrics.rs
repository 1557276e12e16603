//! Accuracy, distance-based stealth reporting and trace summaries.

use serde::{Deserialize, Serialize};

use crate::attack::AttackDiagnostics;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::numerics::{check_dims, dot, ModelParams};
use crate::training::{sigmoid, LossKind};

/// Fraction of correctly handled test samples.
///
/// Logistic models predict 1 when `σ(w·x) >= 0.5`; linear models count a hit
/// when `|w·x − y| <= 0.5`.
pub fn test_accuracy(kind: LossKind, model: &ModelParams, test_set: &[Sample]) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    check_dims(model.dim(), test_set[0].x.len())?;
    let w = model.as_slice();
    let hits = test_set
        .iter()
        .filter(|s| {
            let z = dot(w, &s.x);
            match kind {
                LossKind::LogisticRegression => (sigmoid(z) >= 0.5) == (s.y == 1.0),
                LossKind::LinearRegression => (z - s.y).abs() <= 0.5,
            }
        })
        .count();
    Ok(hits as f64 / test_set.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: usize,
    pub is_malicious: bool,
    /// The model the device uploaded this round.
    pub local: ModelParams,
    pub distance_to_global: f64,
    /// Local objective on the device's own data; attackers hold none.
    pub local_loss: Option<f64>,
    pub local_accuracy: f64,
    /// For attackers: whether an attack update (rather than a skip) was sent.
    pub attack_active: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackerDiagnostics {
    pub attacker_id: usize,
    pub overheard: Vec<usize>,
    pub diagnostics: AttackDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub global: ModelParams,
    pub per_device: Vec<DeviceRecord>,
    pub test_accuracy: f64,
    pub attack_diagnostics: Vec<AttackerDiagnostics>,
    pub warnings: Vec<String>,
}

impl RoundRecord {
    pub fn benign(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.per_device.iter().filter(|d| !d.is_malicious)
    }

    pub fn attackers(&self) -> impl Iterator<Item = &DeviceRecord> {
        self.per_device.iter().filter(|d| d.is_malicious)
    }

    pub fn mean_benign_loss(&self) -> Option<f64> {
        let losses: Vec<f64> = self.benign().filter_map(|d| d.local_loss).collect();
        (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackerDistance {
    pub device_id: usize,
    pub distance: f64,
    pub attack_active: bool,
    /// `distance <= max_benign_distance`.
    pub stealthy: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub max_benign_distance: f64,
    pub attackers: Vec<AttackerDistance>,
}

pub fn distance_report(round: &RoundRecord) -> DistanceReport {
    let max_benign_distance = round
        .benign()
        .map(|d| d.distance_to_global)
        .fold(0.0, f64::max);
    let attackers = round
        .attackers()
        .map(|d| AttackerDistance {
            device_id: d.device_id,
            distance: d.distance_to_global,
            attack_active: d.attack_active,
            stealthy: d.distance_to_global <= max_benign_distance,
        })
        .collect();
    DistanceReport {
        max_benign_distance,
        attackers,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StealthRate {
    pub device_id: usize,
    /// Over all rounds.
    pub rate: f64,
    /// Over rounds in which the attacker actually sent an attack update;
    /// `None` when it never did.
    pub rate_when_active: Option<f64>,
    pub active_rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyBand {
    pub rounds: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl AccuracyBand {
    pub fn of(series: &[f64]) -> Option<Self> {
        if series.is_empty() {
            return None;
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        Some(Self {
            rounds: series.len(),
            min: series.iter().copied().fold(f64::INFINITY, f64::min),
            max: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub accuracy_series: Vec<f64>,
    /// Band over the final `min(last_k, rounds)` rounds.
    pub accuracy_band: AccuracyBand,
    pub stealth: Vec<StealthRate>,
    pub final_global_accuracy: f64,
    pub final_mean_benign_loss: Option<f64>,
}

pub fn trace_summary(records: &[RoundRecord], last_k: usize) -> Result<TraceSummary> {
    let last = records.last().ok_or(Error::Empty("round trace"))?;
    let accuracy_series: Vec<f64> = records.iter().map(|r| r.test_accuracy).collect();
    let k = last_k.clamp(1, accuracy_series.len());
    let accuracy_band = AccuracyBand::of(&accuracy_series[accuracy_series.len() - k..]).expect("non-empty tail");

    let reports: Vec<DistanceReport> = records.iter().map(distance_report).collect();
    let mut ids: Vec<usize> = last.attackers().map(|d| d.device_id).collect();
    ids.sort_unstable();
    let stealth = ids
        .into_iter()
        .map(|id| {
            let entries: Vec<&AttackerDistance> = reports
                .iter()
                .flat_map(|r| r.attackers.iter().filter(move |a| a.device_id == id))
                .collect();
            let stealthy = entries.iter().filter(|a| a.stealthy).count();
            let active: Vec<&&AttackerDistance> = entries.iter().filter(|a| a.attack_active).collect();
            let active_stealthy = active.iter().filter(|a| a.stealthy).count();
            StealthRate {
                device_id: id,
                rate: stealthy as f64 / entries.len().max(1) as f64,
                rate_when_active: (!active.is_empty()).then(|| active_stealthy as f64 / active.len() as f64),
                active_rounds: active.len(),
            }
        })
        .collect();

    Ok(TraceSummary {
        final_global_accuracy: last.test_accuracy,
        final_mean_benign_loss: last.mean_benign_loss(),
        accuracy_series,
        accuracy_band,
        stealth,
    })
}
