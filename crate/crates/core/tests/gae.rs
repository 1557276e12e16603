mod common;

use flsim::attack::{
    build_graph, decode_row, encode_with_noise, graph_loss, init_encoder, sample_loss_context, train_gae,
    AttackSettings, LossContext,
};
use flsim::numerics::{ModelParams, Projector, RngStream};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

#[test]
fn encoder_gradient_matches_finite_differences() {
    for seed in 100..300 {
        for (block, err) in common::gradcheck::gae_instance(seed) {
            assert!(err <= 1e-4, "seed {seed} block {block}: {err:e}");
        }
    }
}

#[test]
fn attacker_latent_gradient_matches_finite_differences() {
    for seed in 100..300 {
        let err = common::gradcheck::ascent_instance(seed);
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
}

fn models(seed: u64, count: usize, dim: usize) -> Vec<ModelParams> {
    let mut rng = RngStream::new(seed, "gae-models");
    (0..count)
        .map(|_| ModelParams::new((0..dim).map(|_| 0.5 + rng.standard_normal()).collect()).unwrap())
        .collect()
}

#[test]
fn training_lowers_the_graph_loss() {
    let ms = models(11, 6, 12);
    let (overheard, prev) = ms.split_at(5);
    let projector = Projector::random(12, 8, &mut RngStream::new(11, "projection")).unwrap();
    let graph = build_graph(overheard, &prev[0], &projector).unwrap();
    let settings = AttackSettings {
        gae_epochs: 100,
        ..AttackSettings::default()
    };
    let out = train_gae(&graph, &settings, &mut RngStream::new(11, "gae")).unwrap();
    let first = out.loss_trace[0];
    let last = *out.loss_trace.last().unwrap();
    assert!(last < first, "{first} -> {last}");
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(1e-12, 1.0 - 1e-12)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn graph_loss_matches_term_by_term_oracle() {
    for beta in [0.0, 0.3] {
        let ms = models(21, 4, 6);
        let (overheard, prev) = ms.split_at(3);
        let mut rng = RngStream::new(21, "oracle");
        let projector = Projector::random(6, 4, &mut rng).unwrap();
        let graph = build_graph(overheard, &prev[0], &projector).unwrap();
        let settings = AttackSettings {
            hidden_dims: vec![5, 3],
            d_z: 3,
            psi_hidden: 4,
            beta,
            ..AttackSettings::default()
        };
        let enc = init_encoder(4, &settings, &mut rng);
        // Every node gets a fixed positive and negative list, duplicates included.
        let ctx = LossContext {
            positives: vec![vec![1, 2], vec![0], vec![0, 1, 3], vec![2]],
            negatives: vec![vec![3, 3], vec![2, 3], vec![], vec![0, 1, 1]],
            eps: (beta > 0.0).then(|| Array2::from_shape_simple_fn((4, 3), || rng.standard_normal())),
        };
        let encoding = encode_with_noise(&graph, &enc, &settings, ctx.eps.as_ref()).unwrap();
        let z = &encoding.latent.z;
        let dot = |a: usize, b: usize| (0..z.ncols()).map(|k| z[[a, k]] * z[[b, k]]).sum::<f64>();

        let mut expected = 0.0;
        for v in 0..4 {
            let pos = &ctx.positives[v];
            if !pos.is_empty() {
                let s: f64 = pos.iter().map(|&u| -clamp_p(sig(dot(v, u))).ln()).sum();
                expected += s / pos.len() as f64;
            }
            let neg = &ctx.negatives[v];
            if !neg.is_empty() {
                let s: f64 = neg.iter().map(|&u| -(1.0 - clamp_p(sig(dot(v, u)))).ln()).sum();
                expected += s / neg.len() as f64;
            }
            let h = encoding.hidden.row(v);
            let mut psi = enc.psi.out_bias;
            for j in 0..enc.psi.bias.len() {
                let mut a = enc.psi.bias[j];
                for (i, hi) in h.iter().enumerate() {
                    a += hi * enc.psi.hidden[[i, j]];
                }
                psi += a.tanh() * enc.psi.out[j];
            }
            expected += -clamp_p(sig(psi)).ln();
        }
        if beta > 0.0 {
            let (mu, lv) = (&encoding.latent.mu, &encoding.latent.logvar);
            let mut kl = 0.0;
            for i in 0..4 {
                for k in 0..3 {
                    kl += 0.5 * (mu[[i, k]].powi(2) + lv[[i, k]].exp() - 1.0 - lv[[i, k]]);
                }
            }
            expected += beta * kl;
        }
        let got = graph_loss(&encoding, &enc, &settings, &ctx);
        assert!((got - expected).abs() <= 1e-10, "beta {beta}: {got} vs {expected}");
    }
}

#[test]
fn loss_context_respects_graph_structure() {
    let ms = models(5, 5, 8);
    let (overheard, prev) = ms.split_at(4);
    let projector = Projector::identity(8);
    let graph = build_graph(overheard, &prev[0], &projector).unwrap();
    let ctx = sample_loss_context(&graph, &AttackSettings::default(), &mut RngStream::new(5, "ctx"));
    for v in 0..graph.node_count() {
        for &u in &ctx.positives[v] {
            assert!(u != v && graph.adjacency[[v, u]] > 0.0);
        }
        for &u in &ctx.negatives[v] {
            assert!(u != v && graph.adjacency[[v, u]] <= 0.0);
        }
    }
}

#[test]
fn adjacency_is_symmetric_with_unit_diagonal() {
    let ms = models(8, 7, 10);
    let (overheard, prev) = ms.split_at(6);
    let projector = Projector::random(10, 6, &mut RngStream::new(8, "p")).unwrap();
    let a = build_graph(overheard, &prev[0], &projector).unwrap().adjacency;
    for i in 0..7 {
        assert_eq!(a[[i, i]], 1.0);
        for j in 0..7 {
            assert_eq!(a[[i, j]], a[[j, i]]);
            assert!((0.0..=1.0).contains(&a[[i, j]]));
        }
    }
}

proptest! {
    #[test]
    fn decoded_row_is_a_strict_probability(
        rows in 2usize..7,
        values in prop::collection::vec(-40.0f64..40.0, 7 * 4),
    ) {
        let z = Array2::from_shape_vec((rows, 4), values[..rows * 4].to_vec()).unwrap();
        let row = decode_row(&z);
        prop_assert_eq!(row.len(), rows - 1);
        let za = z.row(rows - 1).to_owned();
        for (j, p) in row.iter().enumerate() {
            prop_assert!(*p > 0.0 && *p < 1.0);
            // σ(z_a·z_j) = σ(z_j·z_a): decoding is symmetric in the pair.
            let zj: Array1<f64> = z.row(j).to_owned();
            prop_assert!((p - clamp_p(sig(zj.dot(&za)))).abs() <= 1e-12);
        }
    }
}
