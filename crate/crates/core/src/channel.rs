//! Device geometry, inverse-square path loss, SNR and the eavesdropping gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in meters. The server sits at `z == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl DevicePosition {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn server(x: f64, y: f64) -> Self {
        Self { x, y, z: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Gain at 1 m.
    pub t0: f64,
    /// Transmit power (W).
    pub transmit_power: f64,
    /// Noise power (W).
    pub noise_power: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            t0: 1.0,
            transmit_power: 1.0,
            noise_power: 1e-3,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t0", self.t0),
            ("transmit_power", self.transmit_power),
            ("noise_power", self.noise_power),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

pub fn distance(p: &DevicePosition, q: &DevicePosition) -> f64 {
    let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// `t0 / d^2`.
pub fn channel_gain(d: f64, cfg: &ChannelConfig) -> Result<f64> {
    if d == 0.0 {
        return Err(Error::ZeroDistance);
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be positive, got {d}")));
    }
    Ok(cfg.t0 / (d * d))
}

/// `gain * transmit_power / noise_power`.
pub fn snr(gain: f64, cfg: &ChannelConfig) -> f64 {
    gain * cfg.transmit_power / cfg.noise_power
}

pub fn link_snr(from: &DevicePosition, to: &DevicePosition, cfg: &ChannelConfig) -> Result<f64> {
    Ok(snr(channel_gain(distance(from, to), cfg)?, cfg))
}

/// Device ids (1-based, ascending) whose uplink the attacker overhears, i.e.
/// whose device-to-attacker SNR is at least `snr_min`.
pub fn eavesdrop_set(
    benign: &[DevicePosition],
    attacker: &DevicePosition,
    cfg: &ChannelConfig,
    snr_min: f64,
) -> Result<Vec<usize>> {
    let mut heard = Vec::new();
    for (i, p) in benign.iter().enumerate() {
        if link_snr(p, attacker, cfg)? >= snr_min {
            heard.push(i + 1);
        }
    }
    Ok(heard)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(t0: f64, transmit_power: f64, noise_power: f64) -> ChannelConfig {
        ChannelConfig {
            t0,
            transmit_power,
            noise_power,
        }
    }

    #[test]
    fn zero_distance_gain_is_an_error() {
        assert!(matches!(channel_gain(0.0, &cfg(1.0, 1.0, 1.0)), Err(Error::ZeroDistance)));
    }

    #[test]
    fn colocated_device_is_reported() {
        let p = DevicePosition::new(1.0, 1.0, 1.0);
        assert!(eavesdrop_set(&[p], &p, &cfg(1.0, 1.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn validate_rejects_non_positive() {
        assert!(cfg(0.0, 1.0, 1.0).validate().is_err());
        assert!(cfg(1.0, 1.0, -1.0).validate().is_err());
        assert!(ChannelConfig::default().validate().is_ok());
    }
}
