//! Run configuration: TOML text in, validated [`SimConfig`] out.
//!
//! Every field has a default except the handful that define the experiment
//! (`n_benign`, `rounds`, `dataset`). The resolved config is echoed verbatim
//! into `summary.json`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackSettings;
use crate::channel::{ChannelConfig, DevicePosition};
use crate::error::{Error, Result};
use crate::training::{BatchMode, LossKind, TrainSettings};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SamplesPerDevice {
    Uniform(usize),
    PerDevice(Vec<usize>),
}

impl SamplesPerDevice {
    pub fn sizes(&self, n_benign: usize) -> Vec<usize> {
        match self {
            SamplesPerDevice::Uniform(b) => vec![*b; n_benign],
            SamplesPerDevice::PerDevice(v) => v.clone(),
        }
    }
}

/// Sample count each attacker reports to the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttackerSamples {
    Fixed(u64),
    /// `"mean"`: the rounded mean of the benign sample counts.
    Policy(String),
}

impl Default for AttackerSamples {
    fn default() -> Self {
        AttackerSamples::Policy("mean".into())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GlobalInit {
    #[default]
    Zeros,
    Normal { std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_n_train")]
        n_train: usize,
        #[serde(default = "default_n_test")]
        n_test: usize,
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_w_true_seed")]
        w_true_seed: u64,
        /// Standard deviation of each `w_true` entry.
        #[serde(default = "default_w_true_scale")]
        w_true_scale: f64,
    },
    FashionMnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        class_a: u8,
        #[serde(default = "default_class_b")]
        class_b: u8,
    },
}

fn default_n_train() -> usize {
    2000
}
fn default_n_test() -> usize {
    2000
}
fn default_d() -> usize {
    10
}
fn default_w_true_seed() -> u64 {
    7
}
fn default_w_true_scale() -> f64 {
    3.0
}
fn default_class_b() -> u8 {
    9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub loss: LossKind,
    pub alpha: f64,
    pub learning_rate: f64,
    pub local_iterations: usize,
    /// Minibatch size; absent means full-batch.
    pub minibatch: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainSettings::default();
        Self {
            loss: LossKind::LogisticRegression,
            alpha: t.alpha,
            learning_rate: t.learning_rate,
            local_iterations: t.local_iterations,
            minibatch: None,
        }
    }
}

impl TrainingConfig {
    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            alpha: self.alpha,
            learning_rate: self.learning_rate,
            local_iterations: self.local_iterations,
            batch: self.minibatch.map_or(BatchMode::FullBatch, BatchMode::Minibatch),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PositionSpec {
    /// Uniform in `[0, extent.x] x [0, extent.y] x [0, extent.z]`.
    Random {
        #[serde(default = "default_extent")]
        extent: [f64; 3],
        /// Defaults to the master seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Explicit {
        benign: Vec<[f64; 3]>,
        #[serde(default)]
        attackers: Vec<[f64; 3]>,
    },
}

fn default_extent() -> [f64; 3] {
    [100.0, 100.0, 10.0]
}

impl Default for PositionSpec {
    fn default() -> Self {
        PositionSpec::Random {
            extent: default_extent(),
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub t0: f64,
    pub transmit_power: f64,
    pub noise_power: f64,
    /// Minimum device-to-attacker SNR for an upload to be overheard.
    pub snr_min: f64,
    /// Server `(x, y)`; the server sits at `z = 0`.
    pub server: [f64; 2],
    pub positions: PositionSpec,
}

impl ChannelSection {
    pub fn link(&self) -> ChannelConfig {
        ChannelConfig {
            t0: self.t0,
            transmit_power: self.transmit_power,
            noise_power: self.noise_power,
        }
    }
}

impl Default for ChannelSection {
    fn default() -> Self {
        let link = ChannelConfig::default();
        Self {
            t0: link.t0,
            transmit_power: link.transmit_power,
            noise_power: link.noise_power,
            snr_min: 0.0,
            server: [50.0, 50.0],
            positions: PositionSpec::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    #[default]
    None,
    Avgae(AttackSettings),
    Gaussian {
        #[serde(default = "default_sigma")]
        sigma: f64,
    },
    Signflip {
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

fn default_sigma() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    pub rounds: usize,
    pub n_benign: usize,
    #[serde(default)]
    pub n_malicious: usize,
    #[serde(default = "default_samples_per_device")]
    pub samples_per_device: SamplesPerDevice,
    #[serde(default)]
    pub attacker_samples: AttackerSamples,
    #[serde(default)]
    pub global_init: GlobalInit,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub attack: AttackConfig,
    /// Tail length of the accuracy band in the summary.
    #[serde(default = "default_eval_last_k")]
    pub eval_last_k: usize,
    /// Not echoed: two runs that differ only in where they write must
    /// produce identical summaries.
    #[serde(default = "default_output_dir", skip_serializing)]
    pub output_dir: PathBuf,
}

fn default_samples_per_device() -> SamplesPerDevice {
    SamplesPerDevice::Uniform(200)
}
fn default_eval_last_k() -> usize {
    20
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl SimConfig {
    pub fn sample_sizes(&self) -> Vec<usize> {
        self.samples_per_device.sizes(self.n_benign)
    }

    /// Resolved `B^a`.
    pub fn attacker_reported_samples(&self) -> u64 {
        match &self.attacker_samples {
            AttackerSamples::Fixed(b) => *b,
            AttackerSamples::Policy(_) => {
                let sizes = self.sample_sizes();
                (sizes.iter().sum::<usize>() as f64 / sizes.len() as f64).round() as u64
            }
        }
    }

    pub fn server_position(&self) -> DevicePosition {
        DevicePosition::server(self.channel.server[0], self.channel.server[1])
    }

    /// Parses, defaults and validates a TOML document. Relative dataset
    /// paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::config(span_key(&e), e.message().to_string())
        })?;
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let mut cfg: SimConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<root>".into() } else { key }, e.into_inner().message().to_string())
        })?;
        cfg.resolve_paths(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base, overrides)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSpec::FashionMnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        } = &mut self.dataset
        {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |k: &str, m: String| Err(Error::config(k, m));
        if self.n_benign == 0 {
            return err("n_benign", "must be at least 1".into());
        }
        if self.rounds == 0 {
            return err("rounds", "must be at least 1".into());
        }
        if self.eval_last_k == 0 {
            return err("eval_last_k", "must be at least 1".into());
        }
        let sizes = self.sample_sizes();
        if sizes.len() != self.n_benign {
            return err(
                "samples_per_device",
                format!("{} entries for {} benign devices", sizes.len(), self.n_benign),
            );
        }
        if sizes.contains(&0) {
            return err("samples_per_device", "every device needs at least one sample".into());
        }
        match &self.attacker_samples {
            AttackerSamples::Fixed(0) => return err("attacker_samples", "must be at least 1".into()),
            AttackerSamples::Policy(p) if p != "mean" => {
                return err("attacker_samples", format!("expected an integer or \"mean\", got {p:?}"))
            }
            _ => {}
        }
        if let GlobalInit::Normal { std } = self.global_init {
            if !(std.is_finite() && std >= 0.0) {
                return err("global_init.std", format!("must be >= 0, got {std}"));
            }
        }
        self.training
            .settings()
            .validate()
            .or_else(|e| err("training", e.to_string()))?;
        self.channel
            .link()
            .validate()
            .or_else(|e| err("channel", e.to_string()))?;
        if self.channel.snr_min.is_nan() || self.channel.snr_min < 0.0 {
            return err("channel.snr_min", "must be >= 0".into());
        }
        match &self.channel.positions {
            PositionSpec::Random { extent, .. } => {
                if extent.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || extent.iter().all(|v| *v == 0.0) {
                    return err("channel.positions.extent", "must be non-negative and not all zero".into());
                }
            }
            PositionSpec::Explicit { benign, attackers } => {
                if benign.len() != self.n_benign {
                    return err(
                        "channel.positions.benign",
                        format!("{} positions for {} benign devices", benign.len(), self.n_benign),
                    );
                }
                if attackers.len() != self.n_malicious {
                    return err(
                        "channel.positions.attackers",
                        format!("{} positions for {} attackers", attackers.len(), self.n_malicious),
                    );
                }
                if benign.iter().chain(attackers).any(|p| p[2] < 0.0) {
                    return err("channel.positions", "z must be >= 0".into());
                }
            }
        }

        match &self.dataset {
            DatasetSpec::Synthetic {
                n_train,
                n_test,
                d,
                w_true_scale,
                ..
            } => {
                if *d == 0 {
                    return err("dataset.d", "must be at least 1".into());
                }
                if *n_test == 0 {
                    return err("dataset.n_test", "must be at least 1".into());
                }
                let needed: usize = sizes.iter().sum();
                if needed > *n_train {
                    return err(
                        "dataset.n_train",
                        format!("{n_train} samples cannot cover {needed} requested by samples_per_device"),
                    );
                }
                if !(w_true_scale.is_finite() && *w_true_scale >= 0.0) {
                    return err("dataset.w_true_scale", "must be >= 0".into());
                }
            }
            DatasetSpec::FashionMnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                class_a,
                class_b,
            } => {
                for (key, p) in [
                    ("dataset.train_images", train_images),
                    ("dataset.train_labels", train_labels),
                    ("dataset.test_images", test_images),
                    ("dataset.test_labels", test_labels),
                ] {
                    if !p.is_file() {
                        return err(key, format!("file not found: {}", p.display()));
                    }
                }
                if class_a == class_b {
                    return err("dataset.class_b", "must differ from class_a".into());
                }
            }
        }

        match &self.attack {
            AttackConfig::None if self.n_malicious > 0 => {
                return err("attack.kind", format!("n_malicious = {} requires an attack kind", self.n_malicious))
            }
            AttackConfig::Avgae(s) => {
                s.validate().or_else(|e| err("attack", e.to_string()))?;
                if let (DatasetSpec::Synthetic { d, .. }, Some(f)) = (&self.dataset, s.d_feat) {
                    if f > *d && !s.identity_projection {
                        return err("attack.d_feat", format!("{f} exceeds model dimension {d}"));
                    }
                }
            }
            AttackConfig::Gaussian { sigma } if !(sigma.is_finite() && *sigma > 0.0) => {
                return err("attack.sigma", "must be positive".into())
            }
            AttackConfig::Signflip { scale } if !(scale.is_finite() && *scale > 0.0) => {
                return err("attack.scale", "must be positive".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// The resolved configuration as it is echoed into `summary.json`.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is serializable")
    }
}

fn span_key(e: &toml::de::Error) -> String {
    e.span().map_or_else(|| "<syntax>".to_string(), |s| format!("<syntax at byte {}>", s.start))
}

/// Applies `a.b.c=value`; `value` is parsed as a TOML value, falling back to
/// a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config(key, "empty path segment"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
rounds = 3
n_benign = 2
[dataset]
kind = "synthetic"
"#;

    fn parse(text: &str, ov: &[&str]) -> Result<SimConfig> {
        let ov: Vec<String> = ov.iter().map(|s| s.to_string()).collect();
        SimConfig::from_toml_str(text, Path::new("."), &ov)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(MINIMAL, &[]).unwrap();
        assert_eq!(c.sample_sizes(), vec![200, 200]);
        assert_eq!(c.attacker_reported_samples(), 200);
        assert_eq!(c.training.settings(), TrainSettings::default());
        assert_eq!(c.attack, AttackConfig::None);
        assert_eq!(c.channel.snr_min, 0.0);
        let echo = c.echo();
        assert_eq!(echo["training"]["local_iterations"], 5);
        assert_eq!(echo["dataset"]["n_train"], 2000);
        assert!(echo.get("output_dir").is_none());
    }

    #[test]
    fn zero_benign_names_the_field() {
        let err = parse(MINIMAL, &["n_benign=0"]).unwrap_err();
        assert_eq!(err.to_string(), "config error at `n_benign`: must be at least 1");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse(&format!("{MINIMAL}\nbogus = 1\n"), &[]).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("bogus"), "{err}");
        let err = parse(MINIMAL, &["training.learning_rat=0.1"]).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
    }

    #[test]
    fn attackers_need_an_attack() {
        assert!(parse(MINIMAL, &["n_malicious=1"]).is_err());
        let c = parse(MINIMAL, &["n_malicious=1", "attack.kind=\"gaussian\""]).unwrap();
        assert_eq!(c.attack, AttackConfig::Gaussian { sigma: 1.0 });
    }

    #[test]
    fn avgae_settings_parse_with_defaults() {
        let c = parse(
            MINIMAL,
            &[
                "n_malicious=2",
                "attack.kind=\"avgae\"",
                "attack.hidden_dims=[8]",
                "attack.d_thresh={ mode = \"absolute\", value = 0.5 }",
            ],
        )
        .unwrap();
        let AttackConfig::Avgae(s) = &c.attack else { panic!() };
        assert_eq!(s.hidden_dims, vec![8]);
        assert_eq!(s.d_thresh, crate::attack::ThresholdMode::Absolute(0.5));
        assert_eq!(s.d_z, AttackSettings::default().d_z);
    }

    #[test]
    fn explicit_config_echo_round_trips() {
        let full = r#"
seed = 11
rounds = 4
n_benign = 2
n_malicious = 1
samples_per_device = [10, 20]
attacker_samples = 15
eval_last_k = 2
output_dir = "x"
[global_init]
kind = "normal"
std = 0.5
[dataset]
kind = "synthetic"
n_train = 100
n_test = 50
d = 4
w_true_seed = 3
w_true_scale = 2.0
[training]
loss = "linear_regression"
alpha = 0.01
learning_rate = 0.05
local_iterations = 2
minibatch = 5
[channel]
t0 = 1.0
transmit_power = 2.0
noise_power = 0.1
snr_min = 0.5
server = [0.0, 0.0]
[channel.positions]
mode = "explicit"
benign = [[1.0, 0.0, 0.0], [0.0, 2.0, 1.0]]
attackers = [[3.0, 3.0, 0.0]]
[attack]
kind = "signflip"
scale = 2.0
"#;
        let c = parse(full, &[]).unwrap();
        let back: SimConfig = serde_json::from_value(c.echo()).unwrap();
        assert_eq!(SimConfig { output_dir: c.output_dir.clone(), ..back }, c);
        assert_eq!(c.attacker_reported_samples(), 15);
    }

    #[test]
    fn missing_files_are_config_errors() {
        let text = r#"
rounds = 1
n_benign = 1
[dataset]
kind = "fashion_mnist"
train_images = "nope-images"
train_labels = "nope-labels"
test_images = "nope-images"
test_labels = "nope-labels"
"#;
        let err = parse(text, &[]).unwrap_err();
        assert!(err.to_string().contains("dataset.train_images"), "{err}");
    }

    #[test]
    fn override_creates_nested_tables() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "a.b.c=3").unwrap();
        apply_override(&mut t, "name=plain text").unwrap();
        assert_eq!(t["a"]["b"]["c"].as_integer(), Some(3));
        assert_eq!(t["name"].as_str(), Some("plain text"));
        assert!(apply_override(&mut t, "novalue").is_err());
    }
}
