//! Independent oracles shared by the integration tests. Nothing here calls
//! the library routine it is used to check.
#![allow(dead_code)]

use std::path::PathBuf;

use flsim::data::Sample;
use flsim::SimConfig;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn load_config(name: &str, overrides: &[&str]) -> SimConfig {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    SimConfig::from_path(&repo_root().join("configs").join(name), &ov).expect("shipped config is valid")
}

/// Central differences, one coordinate at a time.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`; the floor keeps near-zero components
/// from turning round-off into large ratios.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| relative_error(*x, *y, floor)).fold(0.0, f64::max)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Full-batch gradient descent on the pooled logistic objective
/// `mean log-loss + alpha/2 |w|^2`, written out loop by loop.
pub fn central_logistic(samples: &[Sample], alpha: f64, lr: f64, iterations: usize) -> Vec<f64> {
    let d = samples[0].x.len();
    let mut w = vec![0.0; d];
    for _ in 0..iterations {
        let mut g = vec![0.0; d];
        for s in samples {
            let z: f64 = w.iter().zip(&s.x).map(|(a, b)| a * b).sum();
            let r = logistic(z) - s.y;
            for k in 0..d {
                g[k] += r * s.x[k];
            }
        }
        for k in 0..d {
            w[k] -= lr * (g[k] / samples.len() as f64 + alpha * w[k]);
        }
    }
    w
}

pub fn logistic_accuracy(w: &[f64], test: &[Sample]) -> f64 {
    let mut hits = 0usize;
    for s in test {
        let z: f64 = w.iter().zip(&s.x).map(|(a, b)| a * b).sum();
        let predicted = if logistic(z) >= 0.5 { 1.0 } else { 0.0 };
        if predicted == s.y {
            hits += 1;
        }
    }
    hits as f64 / test.len() as f64
}

/// Linear-interpolation percentile on a sorted copy.
pub fn percentile_oracle(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn mean_std(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub mod gradcheck {
    use flsim::attack::{
        build_graph, encode_with_noise, graph_loss, init_encoder, loss_and_gradient, sample_loss_context,
        surrogate, surrogate_gradient, Activation, AttackSettings,
    };
    use flsim::data::{LocalDataset, Sample};
    use flsim::numerics::{ModelParams, Projector, RngStream};
    use flsim::training::{local_gradient, local_loss, LossKind};
    use ndarray::Array2;

    use super::{finite_difference, max_relative_error};

    pub const H: f64 = 1e-6;
    pub const FLOOR: f64 = 1e-4;
    /// Entry scale of the random models behind each graph instance. Central
    /// differences carry round-off of order `loss * 1e-16 / h`, so instances
    /// are kept small enough that the loss stays O(10).
    const SCALE: f64 = 0.3;

    /// Max relative error of the local-objective gradient on a random
    /// `d = 6`, `B = 20` instance.
    pub fn training_instance(kind: LossKind, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed, "gradcheck/training");
        let d = 6;
        let samples: Vec<Sample> = (0..20)
            .map(|_| {
                let x: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
                let y = match kind {
                    LossKind::LogisticRegression => f64::from(u8::from(rng.coin())),
                    LossKind::LinearRegression => 2.0 * rng.standard_normal(),
                };
                Sample::new(x, y)
            })
            .collect();
        let ds = LocalDataset::new(1, samples).unwrap();
        let alpha = rng.uniform(0.0, 0.1);
        let w: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let analytic = local_gradient(kind, &ModelParams::new(w.clone()).unwrap(), &ds, alpha).unwrap();
        let numeric = finite_difference(
            |v| local_loss(kind, &ModelParams::new(v.to_vec()).unwrap(), &ds, alpha).unwrap(),
            &w,
            H,
        );
        max_relative_error(analytic.as_slice(), &numeric, FLOOR)
    }

    fn random_models(rng: &mut RngStream, count: usize, dim: usize, offset: f64) -> Vec<ModelParams> {
        (0..count)
            .map(|_| ModelParams::new((0..dim).map(|_| offset + SCALE * rng.standard_normal()).collect()).unwrap())
            .collect()
    }

    /// Per-block max relative error of the graph-loss gradient on a random
    /// 3- or 4-node instance. Block names follow `EncoderState::blocks`.
    pub fn gae_instance(seed: u64) -> Vec<(String, f64)> {
        let mut rng = RngStream::new(seed, "gradcheck/gae");
        let nodes = 3 + rng.index(2);
        let dim = 6;
        let offset = if rng.coin() { 0.0 } else { 0.15 };
        let models = random_models(&mut rng, nodes - 1, dim, offset);
        let prev = random_models(&mut rng, 1, dim, offset).pop().unwrap();
        let projector = Projector::random(dim, 4, &mut rng).unwrap();
        let graph = build_graph(&models, &prev, &projector).unwrap();

        let settings = AttackSettings {
            hidden_dims: if rng.coin() { vec![3] } else { vec![4, 3] },
            d_z: 2,
            psi_hidden: 3,
            activation: if rng.index(4) == 0 { Activation::Relu } else { Activation::Tanh },
            beta: if rng.coin() { 0.0 } else { 0.5 },
            negative_sample_ratio: 1.0,
            ..AttackSettings::default()
        };
        let mut enc = init_encoder(4, &settings, &mut rng);
        // Move every parameter (biases start at zero) while keeping the loss
        // well scaled: FD at h = 1e-6 cannot resolve gradients of a ~1e7 loss.
        let mut flat = enc.to_flat();
        for v in flat.iter_mut() {
            *v += 0.1 * rng.standard_normal();
        }
        enc = enc.with_flat(&flat);
        let ctx = sample_loss_context(&graph, &settings, &mut rng);

        let (_, grad) = loss_and_gradient(&graph, &enc, &settings, &ctx).unwrap();
        let analytic = grad.to_flat();
        let numeric = finite_difference(
            |v| {
                let e = enc.with_flat(v);
                let encoding = encode_with_noise(&graph, &e, &settings, ctx.eps.as_ref()).unwrap();
                graph_loss(&encoding, &e, &settings, &ctx)
            },
            &flat,
            H,
        );
        enc.blocks()
            .into_iter()
            .map(|(name, range)| {
                let err = max_relative_error(&analytic[range.clone()], &numeric[range], FLOOR);
                (name, err)
            })
            .collect()
    }

    /// Max relative error of the attacker-latent ascent gradient.
    pub fn ascent_instance(seed: u64) -> f64 {
        let mut rng = RngStream::new(seed, "gradcheck/ascent");
        let nodes = 3 + rng.index(4);
        let d_z = 2 + rng.index(3);
        let z = Array2::from_shape_simple_fn((nodes, d_z), || rng.standard_normal());
        let scores: Vec<f64> = (0..nodes - 1).map(|_| rng.standard_normal()).collect();
        let centroid = scores.iter().sum::<f64>() / scores.len() as f64;
        let z_a: Vec<f64> = (0..d_z).map(|_| rng.standard_normal()).collect();
        let analytic = surrogate_gradient(&z_a, &z, &scores);
        let numeric = finite_difference(|v| surrogate(v, &z, &scores, centroid), &z_a, H);
        max_relative_error(&analytic, &numeric, FLOOR)
    }
}
