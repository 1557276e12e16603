//! Graph auto-encoder model-manipulation attack.
//!
//! An attacker overhears benign uploads, builds a correlation graph over the
//! (projected) models, trains a small variational graph encoder on it, then
//! perturbs its own latent code so the decoded adjacency row mixes the benign
//! models against the round's consensus progress. The mixture is finally
//! pushed along the ascent direction as far as the stealth radius allows.
//!
//! Pipeline, as composed by [`run_attack`]:
//!
//! 1. [`build_graph`]: features are projected models, edges are clipped cosines.
//! 2. [`train_gae`]: gradient descent on the graph-generation loss.
//! 3. [`encode`]: latent codes from the trained encoder.
//! 4. [`estimate_ascent_direction`]: negated consensus descent direction.
//! 5. [`adversarial_reconstruct`]: gradient ascent on the attacker's latent.
//! 6. [`generate_malicious`]: mixture of the original models plus a bounded push.

mod adversarial;
mod encoder;
mod graph;

use serde::{Deserialize, Serialize};

pub use adversarial::{
    adversarial_reconstruct, decode_row, enclosing_center, estimate_ascent_direction, generate_malicious,
    max_distance_to, surrogate, surrogate_gradient, AdversarialRow, MaliciousModel,
};
pub use encoder::{
    encode, encode_with_noise, graph_loss, init_encoder, loss_and_gradient, sample_loss_context, train_gae,
    Encoding, EncoderState, GaeTraining, LatentState, LossContext, PsiMlp,
};
pub use graph::{build_graph, ModelGraph};

use crate::aggregation::ReportedUpdate;
use crate::error::{Error, Result};
use crate::numerics::{euclidean_distance, percentile, ModelParams, Projector, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How the stealth radius is chosen each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Fixed radius.
    Absolute(f64),
    /// Percentile (0–100) of the round's pairwise overheard-model distances.
    Percentile(f64),
}

impl ThresholdMode {
    pub fn resolve(&self, overheard: &[ModelParams]) -> Result<f64> {
        match *self {
            ThresholdMode::Absolute(d) => Ok(d),
            ThresholdMode::Percentile(q) => {
                let mut pairwise = Vec::new();
                for i in 0..overheard.len() {
                    for j in i + 1..overheard.len() {
                        pairwise.push(euclidean_distance(&overheard[i], &overheard[j])?);
                    }
                }
                percentile(&pairwise, q)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSettings {
    /// Projected feature width; `None` resolves to `min(16, model dim)`.
    pub d_feat: Option<usize>,
    pub identity_projection: bool,
    pub d_z: usize,
    /// Width of each encoder layer; the layer count is the length.
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub psi_hidden: usize,
    pub gae_epochs: usize,
    pub gae_learning_rate: f64,
    /// KL weight; 0 turns the encoder into a plain (non-variational) GAE.
    pub beta: f64,
    pub ascent_steps: usize,
    pub ascent_step_size: f64,
    pub d_thresh: ThresholdMode,
    pub negative_sample_ratio: f64,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            d_feat: None,
            identity_projection: false,
            d_z: 8,
            hidden_dims: vec![16, 16],
            activation: Activation::Tanh,
            psi_hidden: 8,
            gae_epochs: 100,
            gae_learning_rate: 0.01,
            beta: 0.001,
            ascent_steps: 20,
            ascent_step_size: 1.0,
            d_thresh: ThresholdMode::Percentile(90.0),
            negative_sample_ratio: 1.0,
        }
    }
}

impl AttackSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be non-empty with positive widths".into());
        }
        if self.d_z == 0 || self.psi_hidden == 0 {
            return bad("d_z and psi_hidden must be positive".into());
        }
        if self.d_feat == Some(0) {
            return bad("d_feat must be positive".into());
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if self.ascent_steps == 0 {
            return bad("ascent_steps must be at least 1".into());
        }
        if !(self.ascent_step_size.is_finite() && self.ascent_step_size >= 0.0) {
            return bad("ascent_step_size must be >= 0".into());
        }
        if !(self.gae_learning_rate.is_finite() && self.gae_learning_rate >= 0.0) {
            return bad("gae_learning_rate must be >= 0".into());
        }
        if !(self.negative_sample_ratio.is_finite() && self.negative_sample_ratio >= 0.0) {
            return bad("negative_sample_ratio must be >= 0".into());
        }
        match self.d_thresh {
            ThresholdMode::Absolute(d) if !(d.is_finite() && d > 0.0) => {
                bad(format!("absolute d_thresh must be positive, got {d}"))
            }
            ThresholdMode::Percentile(q) if !(q > 0.0 && q <= 100.0) => {
                bad(format!("d_thresh percentile must be in (0, 100], got {q}"))
            }
            _ => Ok(()),
        }
    }

    /// Feature width for a model of dimension `dim`.
    pub fn resolved_d_feat(&self, dim: usize) -> usize {
        if self.identity_projection {
            dim
        } else {
            self.d_feat.unwrap_or(dim.min(16))
        }
    }
}

/// Everything an attacker observes in one round.
#[derive(Clone, Copy, Debug)]
pub struct AttackInput<'a> {
    pub attacker_id: usize,
    /// Overheard benign models, in ascending device-id order.
    pub overheard: &'a [ModelParams],
    /// The attacker's own model from the previous round (the last broadcast).
    pub attacker_prev: &'a ModelParams,
    /// The global model the benign devices started this round from.
    pub previous_global: &'a ModelParams,
    pub projector: &'a Projector,
    pub reported_samples: u64,
}

/// Per-round diagnostics of one attacker.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackDiagnostics {
    pub skipped: bool,
    pub skip_reason: Option<String>,
    pub delta_g_trace: Vec<f64>,
    pub gamma_model: Option<f64>,
    pub d_thresh: Option<f64>,
    /// `max_n ||ω_a − ω_n||` over the overheard models.
    pub max_distance_to_overheard: Option<f64>,
    pub uniform_fallback: bool,
    pub pulled_toward_center: Option<f64>,
    pub surrogate_initial: Option<f64>,
    pub surrogate_final: Option<f64>,
}

impl AttackDiagnostics {
    pub fn skipped(reason: impl Into<String>) -> Self {
        Self {
            skipped: true,
            skip_reason: Some(reason.into()),
            ..Self::default()
        }
    }

    pub fn delta_g_initial(&self) -> Option<f64> {
        self.delta_g_trace.first().copied()
    }

    pub fn delta_g_final(&self) -> Option<f64> {
        self.delta_g_trace.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackOutcome {
    pub update: ReportedUpdate,
    pub diagnostics: AttackDiagnostics,
}

/// Runs the full pipeline for one attacker and round.
///
/// Recoverable conditions (fewer than two overheard models, an infeasible
/// stealth radius) skip the attack: the attacker re-submits `attacker_prev`
/// and the reason lands in the diagnostics.
pub fn run_attack(input: AttackInput<'_>, settings: &AttackSettings, rng: &mut RngStream) -> Result<AttackOutcome> {
    settings.validate()?;
    let skip = |reason: String| AttackOutcome {
        update: ReportedUpdate {
            device_id: input.attacker_id,
            params: input.attacker_prev.clone(),
            reported_samples: input.reported_samples,
            is_malicious: true,
        },
        diagnostics: AttackDiagnostics::skipped(reason),
    };

    let graph = match build_graph(input.overheard, input.attacker_prev, input.projector) {
        Ok(g) => g,
        Err(e @ Error::TooFewOverheard { .. }) => return Ok(skip(e.to_string())),
        Err(e) => return Err(e),
    };
    let d_thresh = settings.d_thresh.resolve(input.overheard)?;
    if !(d_thresh > 0.0) {
        return Ok(skip(format!("degenerate stealth radius {d_thresh}")));
    }

    let training = train_gae(&graph, settings, &mut rng.child("gae"))?;
    let encoding = encode(&graph, &training.state, settings, &mut rng.child("encode"))?;
    let ascent = estimate_ascent_direction(input.previous_global, input.overheard)?;
    let row = adversarial_reconstruct(&encoding.latent.z, &ascent, input.overheard, settings)?;
    let malicious = match generate_malicious(&row.row, input.overheard, &ascent, d_thresh) {
        Ok(m) => m,
        Err(e @ Error::ThresholdInfeasible { .. }) => return Ok(skip(e.to_string())),
        Err(e) => return Err(e),
    };

    Ok(AttackOutcome {
        update: ReportedUpdate {
            device_id: input.attacker_id,
            params: malicious.params,
            reported_samples: input.reported_samples,
            is_malicious: true,
        },
        diagnostics: AttackDiagnostics {
            skipped: false,
            skip_reason: None,
            delta_g_trace: training.loss_trace,
            gamma_model: Some(malicious.gamma_model),
            d_thresh: Some(d_thresh),
            max_distance_to_overheard: Some(malicious.max_distance),
            uniform_fallback: malicious.uniform_fallback,
            pulled_toward_center: malicious.pulled_toward_center,
            surrogate_initial: row.surrogate_trace.first().copied(),
            surrogate_final: row.surrogate_trace.last().copied(),
        },
    })
}
