//! Variational graph encoder, graph-generation loss and its hand-written
//! reverse-mode gradient.
//!
//! Layer `l` computes `κ^l = θ((κ^{l-1} + Â κ^{l-1}) η^l)` with `Â` the
//! row-normalized adjacency, starting from `κ^0 = Q`. Two linear heads map
//! `κ^L` to per-node `mu` and `logvar`; `z = mu + exp(logvar / 2) ⊙ ε` when
//! the KL weight is positive and `z = mu` otherwise. A one-hidden-layer tanh
//! MLP `Ψ` scores each node.

use ndarray::{Array1, Array2, Axis, Zip};

use super::graph::ModelGraph;
use super::{Activation, AttackSettings};
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::training::{sigmoid, softplus};

const PROB_EPS: f64 = 1e-12;
/// Training stops with an error once the loss exceeds this.
const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq)]
pub struct PsiMlp {
    /// `h_L x p`
    pub hidden: Array2<f64>,
    pub bias: Array1<f64>,
    pub out: Array1<f64>,
    pub out_bias: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    /// `η^l`, each `d_{l-1} x d_l`.
    pub layers: Vec<Array2<f64>>,
    pub mu_head: Array2<f64>,
    pub logvar_head: Array2<f64>,
    pub psi: PsiMlp,
}

impl EncoderState {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            mu_head: Array2::zeros(self.mu_head.raw_dim()),
            logvar_head: Array2::zeros(self.logvar_head.raw_dim()),
            psi: PsiMlp {
                hidden: Array2::zeros(self.psi.hidden.raw_dim()),
                bias: Array1::zeros(self.psi.bias.len()),
                out: Array1::zeros(self.psi.out.len()),
                out_bias: 0.0,
            },
        }
    }

    /// All parameters in a fixed order: layers, mu head, logvar head, Ψ.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.parameter_count());
        for w in &self.layers {
            v.extend(w.iter());
        }
        v.extend(self.mu_head.iter());
        v.extend(self.logvar_head.iter());
        v.extend(self.psi.hidden.iter());
        v.extend(self.psi.bias.iter());
        v.extend(self.psi.out.iter());
        v.push(self.psi.out_bias);
        v
    }

    /// Same shapes as `self`, values taken from `flat` (see [`Self::to_flat`]).
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.parameter_count());
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for w in &mut out.layers {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        out.mu_head.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.logvar_head.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.psi.hidden.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.psi.bias.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.psi.out.iter_mut().for_each(|x| *x = it.next().unwrap());
        out.psi.out_bias = it.next().unwrap();
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum::<usize>()
            + self.mu_head.len()
            + self.logvar_head.len()
            + self.psi.hidden.len()
            + self.psi.bias.len()
            + self.psi.out.len()
            + 1
    }

    /// Index range of each block inside [`Self::to_flat`], labelled.
    pub fn blocks(&self) -> Vec<(String, std::ops::Range<usize>)> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut push = |name: String, len: usize| {
            out.push((name, start..start + len));
            start += len;
        };
        for (l, w) in self.layers.iter().enumerate() {
            push(format!("eta[{}]", l + 1), w.len());
        }
        push("mu_head".into(), self.mu_head.len());
        push("logvar_head".into(), self.logvar_head.len());
        push(
            "psi".into(),
            self.psi.hidden.len() + self.psi.bias.len() + self.psi.out.len() + 1,
        );
        out
    }

    fn axpy(&mut self, a: f64, other: &Self) {
        for (w, g) in self.layers.iter_mut().zip(&other.layers) {
            w.scaled_add(a, g);
        }
        self.mu_head.scaled_add(a, &other.mu_head);
        self.logvar_head.scaled_add(a, &other.logvar_head);
        self.psi.hidden.scaled_add(a, &other.psi.hidden);
        self.psi.bias.scaled_add(a, &other.psi.bias);
        self.psi.out.scaled_add(a, &other.psi.out);
        self.psi.out_bias += a * other.psi.out_bias;
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |w| w.ncols())
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut RngStream) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.uniform(-limit, limit))
}

/// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
pub fn init_encoder(d_feat: usize, settings: &AttackSettings, rng: &mut RngStream) -> EncoderState {
    let mut layers = Vec::with_capacity(settings.hidden_dims.len());
    let mut d_in = d_feat;
    for &d_out in &settings.hidden_dims {
        layers.push(glorot(d_in, d_out, rng));
        d_in = d_out;
    }
    let mu_head = glorot(d_in, settings.d_z, rng);
    let logvar_head = glorot(d_in, settings.d_z, rng);
    let psi_hidden = glorot(d_in, settings.psi_hidden, rng);
    let psi_out = glorot(settings.psi_hidden, 1, rng).column(0).to_owned();
    EncoderState {
        layers,
        mu_head,
        logvar_head,
        psi: PsiMlp {
            hidden: psi_hidden,
            bias: Array1::zeros(settings.psi_hidden),
            out: psi_out,
            out_bias: 0.0,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub mu: Array2<f64>,
    pub logvar: Array2<f64>,
    pub z: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// `κ^L`, one row per node.
    pub hidden: Array2<f64>,
    pub latent: LatentState,
}

/// Fixed randomness of one loss evaluation: link targets and the
/// reparameterization noise.
#[derive(Clone, Debug, PartialEq)]
pub struct LossContext {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    /// `n x d_z` standard normal; `None` when the KL weight is zero.
    pub eps: Option<Array2<f64>>,
}

fn draw_noise(n: usize, d_z: usize, rng: &mut RngStream) -> Array2<f64> {
    Array2::from_shape_simple_fn((n, d_z), || rng.standard_normal())
}

/// Positives are each node's neighbours; negatives are drawn with
/// replacement from its non-neighbours, `ratio x max(1, #positives)` of them.
pub fn sample_loss_context(graph: &ModelGraph, settings: &AttackSettings, rng: &mut RngStream) -> LossContext {
    let n = graph.node_count();
    let mut positives = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    for v in 0..n {
        let pos = graph.neighbours(v);
        let pool = graph.non_neighbours(v);
        let count = (settings.negative_sample_ratio * pos.len().max(1) as f64).round() as usize;
        let neg = if pool.is_empty() {
            Vec::new()
        } else {
            (0..count).map(|_| pool[rng.index(pool.len())]).collect()
        };
        positives.push(pos);
        negatives.push(neg);
    }
    let eps = (settings.beta > 0.0).then(|| draw_noise(n, settings.d_z, rng));
    LossContext {
        positives,
        negatives,
        eps,
    }
}

struct Forward {
    /// `P^l = M κ^{l-1}` per layer.
    inputs: Vec<Array2<f64>>,
    /// `S^l = P^l η^l`.
    pre: Vec<Array2<f64>>,
    /// `κ^0 ..= κ^L`.
    hidden: Vec<Array2<f64>>,
    mu: Array2<f64>,
    logvar: Array2<f64>,
    z: Array2<f64>,
    psi_hidden: Array2<f64>,
    psi: Array1<f64>,
}

fn forward(
    graph: &ModelGraph,
    propagation: &Array2<f64>,
    enc: &EncoderState,
    activation: Activation,
    eps: Option<&Array2<f64>>,
) -> Result<Forward> {
    let mut inputs = Vec::with_capacity(enc.layers.len());
    let mut pre = Vec::with_capacity(enc.layers.len());
    let mut hidden = vec![graph.features.clone()];
    for (l, w) in enc.layers.iter().enumerate() {
        let p = propagation.dot(hidden.last().unwrap());
        let s = p.dot(w);
        let h = s.mapv(|x| activation.apply(x));
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteHidden { layer: l + 1 });
        }
        inputs.push(p);
        pre.push(s);
        hidden.push(h);
    }
    let top = hidden.last().unwrap();
    let mu = top.dot(&enc.mu_head);
    let logvar = top.dot(&enc.logvar_head);
    let z = match eps {
        Some(e) => &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * e),
        None => mu.clone(),
    };
    let psi_hidden = (top.dot(&enc.psi.hidden) + &enc.psi.bias).mapv(f64::tanh);
    let psi = psi_hidden.dot(&enc.psi.out) + enc.psi.out_bias;
    Ok(Forward {
        inputs,
        pre,
        hidden,
        mu,
        logvar,
        z,
        psi_hidden,
        psi,
    })
}

pub fn encode_with_noise(
    graph: &ModelGraph,
    enc: &EncoderState,
    settings: &AttackSettings,
    eps: Option<&Array2<f64>>,
) -> Result<Encoding> {
    let f = forward(graph, &graph.propagation(), enc, settings.activation, eps)?;
    Ok(Encoding {
        hidden: f.hidden.last().unwrap().clone(),
        latent: LatentState {
            mu: f.mu,
            logvar: f.logvar,
            z: f.z,
        },
    })
}

/// Encodes every node; noise is drawn from `rng` only when `beta > 0`.
pub fn encode(graph: &ModelGraph, enc: &EncoderState, settings: &AttackSettings, rng: &mut RngStream) -> Result<Encoding> {
    let eps = (settings.beta > 0.0).then(|| draw_noise(graph.node_count(), settings.d_z, rng));
    encode_with_noise(graph, enc, settings, eps.as_ref())
}

/// `-ln σ(x)` with `σ(x)` clamped to `[PROB_EPS, 1 − PROB_EPS]`, evaluated as
/// a clamped softplus so large margins keep full precision. `-ln(1 − σ(x))`
/// is `neg_log_sigmoid(-x)`.
fn neg_log_sigmoid(x: f64) -> f64 {
    softplus(-x).clamp(-(-PROB_EPS).ln_1p(), -PROB_EPS.ln())
}

/// Whether the probability clamp is inactive at `x` (non-zero gradient).
fn unclamped(x: f64) -> bool {
    let l = softplus(-x);
    l > -(-PROB_EPS).ln_1p() && l < -PROB_EPS.ln()
}

fn kl_standard_normal(mu: &Array2<f64>, logvar: &Array2<f64>) -> f64 {
    0.5 * Zip::from(mu)
        .and(logvar)
        .fold(0.0, |acc, &m, &lv| acc + m * m + lv.exp() - 1.0 - lv)
}

fn row_dot(z: &Array2<f64>, a: usize, b: usize) -> f64 {
    z.row(a).dot(&z.row(b))
}

fn loss_from_parts(z: &Array2<f64>, mu: &Array2<f64>, logvar: &Array2<f64>, psi: &Array1<f64>, beta: f64, ctx: &LossContext) -> f64 {
    let mut total = 0.0;
    for v in 0..z.nrows() {
        let pos = &ctx.positives[v];
        if !pos.is_empty() {
            let s: f64 = pos.iter().map(|&u| neg_log_sigmoid(row_dot(z, v, u))).sum();
            total += s / pos.len() as f64;
        }
        let neg = &ctx.negatives[v];
        if !neg.is_empty() {
            let s: f64 = neg
                .iter()
                .map(|&u| neg_log_sigmoid(-row_dot(z, v, u)))
                .sum();
            total += s / neg.len() as f64;
        }
        total += neg_log_sigmoid(psi[v]);
    }
    if beta > 0.0 {
        total += beta * kl_standard_normal(mu, logvar);
    }
    total
}

/// δ_G: per-node link reconstruction cross-entropy plus `-log σ(Ψ(κ_V))`,
/// plus `beta` times the KL divergence to a standard normal.
pub fn graph_loss(encoding: &Encoding, enc: &EncoderState, settings: &AttackSettings, ctx: &LossContext) -> f64 {
    let psi_hidden = (encoding.hidden.dot(&enc.psi.hidden) + &enc.psi.bias).mapv(f64::tanh);
    let psi = psi_hidden.dot(&enc.psi.out) + enc.psi.out_bias;
    let l = &encoding.latent;
    loss_from_parts(&l.z, &l.mu, &l.logvar, &psi, settings.beta, ctx)
}

/// δ_G and its gradient with respect to every encoder parameter.
pub fn loss_and_gradient(
    graph: &ModelGraph,
    enc: &EncoderState,
    settings: &AttackSettings,
    ctx: &LossContext,
) -> Result<(f64, EncoderState)> {
    let propagation = graph.propagation();
    let f = forward(graph, &propagation, enc, settings.activation, ctx.eps.as_ref())?;
    let loss = loss_from_parts(&f.z, &f.mu, &f.logvar, &f.psi, settings.beta, ctx);
    let mut grad = enc.zeros_like();
    let n = f.z.nrows();

    // Link terms.
    let mut dz = Array2::<f64>::zeros(f.z.raw_dim());
    for v in 0..n {
        let pos = &ctx.positives[v];
        for &u in pos {
            let x = row_dot(&f.z, v, u);
            if unclamped(x) {
                let g = -sigmoid(-x) / pos.len() as f64;
                accumulate_pair(&mut dz, &f.z, v, u, g);
            }
        }
        let neg = &ctx.negatives[v];
        for &u in neg {
            let x = row_dot(&f.z, v, u);
            if unclamped(-x) {
                let g = sigmoid(x) / neg.len() as f64;
                accumulate_pair(&mut dz, &f.z, v, u, g);
            }
        }
    }

    // Ψ term.
    let top = f.hidden.last().unwrap();
    let dpsi: Array1<f64> = f
        .psi
        .mapv(|x| {
            if unclamped(x) {
                -sigmoid(-x)
            } else {
                0.0
            }
        });
    grad.psi.out = f.psi_hidden.t().dot(&dpsi);
    grad.psi.out_bias = dpsi.sum();
    let mut dpre_psi = Array2::<f64>::zeros(f.psi_hidden.raw_dim());
    for v in 0..n {
        for k in 0..f.psi_hidden.ncols() {
            let h = f.psi_hidden[[v, k]];
            dpre_psi[[v, k]] = dpsi[v] * enc.psi.out[k] * (1.0 - h * h);
        }
    }
    grad.psi.hidden = top.t().dot(&dpre_psi);
    grad.psi.bias = dpre_psi.sum_axis(Axis(0));
    let mut dtop = dpre_psi.dot(&enc.psi.hidden.t());

    // Latent heads (reparameterization and KL).
    let mut dmu = dz.clone();
    let mut dlogvar = Array2::<f64>::zeros(f.logvar.raw_dim());
    if let Some(eps) = &ctx.eps {
        Zip::from(&mut dlogvar)
            .and(&dz)
            .and(eps)
            .and(&f.logvar)
            .for_each(|d, &g, &e, &lv| *d = g * e * 0.5 * (0.5 * lv).exp());
    }
    if settings.beta > 0.0 {
        dmu.scaled_add(settings.beta, &f.mu);
        Zip::from(&mut dlogvar)
            .and(&f.logvar)
            .for_each(|d, &lv| *d += settings.beta * 0.5 * (lv.exp() - 1.0));
    }
    grad.mu_head = top.t().dot(&dmu);
    grad.logvar_head = top.t().dot(&dlogvar);
    dtop = dtop + dmu.dot(&enc.mu_head.t()) + dlogvar.dot(&enc.logvar_head.t());

    // Encoder layers.
    let mut dh = dtop;
    for l in (0..enc.layers.len()).rev() {
        let mut ds = dh;
        Zip::from(&mut ds)
            .and(&f.pre[l])
            .and(&f.hidden[l + 1])
            .for_each(|d, &s, &h| *d *= settings.activation.derivative(s, h));
        grad.layers[l] = f.inputs[l].t().dot(&ds);
        let dp = ds.dot(&enc.layers[l].t());
        dh = propagation.t().dot(&dp);
    }
    Ok((loss, grad))
}

fn accumulate_pair(dz: &mut Array2<f64>, z: &Array2<f64>, v: usize, u: usize, g: f64) {
    let zu = z.row(u).to_owned();
    let zv = z.row(v).to_owned();
    dz.row_mut(v).scaled_add(g, &zu);
    dz.row_mut(u).scaled_add(g, &zv);
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaeTraining {
    pub state: EncoderState,
    /// δ_G before each epoch, then after the last one.
    pub loss_trace: Vec<f64>,
    pub context: LossContext,
}

/// Initializes the encoder from `rng` and runs `gae_epochs` full-graph
/// gradient-descent steps on δ_G. Link targets and noise are drawn once.
pub fn train_gae(graph: &ModelGraph, settings: &AttackSettings, rng: &mut RngStream) -> Result<GaeTraining> {
    let mut state = init_encoder(graph.features.ncols(), settings, rng);
    let context = sample_loss_context(graph, settings, rng);
    let mut loss_trace = Vec::with_capacity(settings.gae_epochs + 1);
    for epoch in 0..=settings.gae_epochs {
        let (loss, grad) = loss_and_gradient(graph, &state, settings, &context)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(Error::GaeDiverged { epoch, loss });
        }
        loss_trace.push(loss);
        if epoch == settings.gae_epochs {
            break;
        }
        state.axpy(-settings.gae_learning_rate, &grad);
    }
    if !state.is_finite() {
        return Err(Error::GaeDiverged {
            epoch: settings.gae_epochs,
            loss: f64::NAN,
        });
    }
    Ok(GaeTraining {
        state,
        loss_trace,
        context,
    })
}
