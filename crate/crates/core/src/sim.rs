//! The round loop: local training, eavesdropping, attacks, aggregation and
//! per-round metrics.

use rayon::prelude::*;

use crate::aggregation::{aggregate, ReportedUpdate};
use crate::attack::{run_attack, AttackDiagnostics, AttackInput};
use crate::baseline::{gaussian_noise_attack, sign_flip_attack};
use crate::channel::{eavesdrop_set, DevicePosition};
use crate::config::{AttackConfig, DatasetSpec, GlobalInit, PositionSpec, SimConfig};
use crate::data::{binarize, load_idx, partition_iid, synth_logistic, LocalDataset, Sample};
use crate::error::{Error, Result};
use crate::metrics::{test_accuracy, AttackerDiagnostics, DeviceRecord, RoundRecord};
use crate::numerics::{euclidean_distance, mean, ModelParams, Projector, RngStream};
use crate::training::{local_loss, train_local};

/// Everything fixed before round 1.
#[derive(Clone, Debug)]
pub struct Environment {
    pub datasets: Vec<LocalDataset>,
    pub test_set: Vec<Sample>,
    pub dim: usize,
    pub benign_positions: Vec<DevicePosition>,
    pub attacker_positions: Vec<DevicePosition>,
    pub projector: Option<Projector>,
    pub global_init: ModelParams,
}

fn stage<T>(round: usize, name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        round,
        stage: name,
        source: Box::new(e),
    })
}

/// The synthetic task's ground-truth weights.
pub fn synthetic_w_true(d: usize, w_true_seed: u64, scale: f64) -> ModelParams {
    let mut rng = RngStream::new(w_true_seed, "w_true");
    ModelParams::from_vec((0..d).map(|_| scale * rng.standard_normal()).collect())
}

/// Training pool and test set before partitioning.
pub fn load_dataset(cfg: &SimConfig) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic {
            n_train,
            n_test,
            d,
            w_true_seed,
            w_true_scale,
        } => {
            let w_true = synthetic_w_true(*d, *w_true_seed, *w_true_scale);
            let train = synth_logistic(*n_train, &w_true, &mut RngStream::new(cfg.seed, "data/train"))?;
            let test = synth_logistic(*n_test, &w_true, &mut RngStream::new(cfg.seed, "data/test"))?;
            Ok((train, test))
        }
        DatasetSpec::FashionMnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            class_a,
            class_b,
        } => {
            let train = binarize(&load_idx(train_images, train_labels)?, *class_a, *class_b)?;
            let test = binarize(&load_idx(test_images, test_labels)?, *class_a, *class_b)?;
            Ok((train, test))
        }
    }
}

fn positions(cfg: &SimConfig) -> (Vec<DevicePosition>, Vec<DevicePosition>) {
    match &cfg.channel.positions {
        PositionSpec::Explicit { benign, attackers } => {
            let conv = |v: &[[f64; 3]]| v.iter().map(|p| DevicePosition::new(p[0], p[1], p[2])).collect();
            (conv(benign), conv(attackers))
        }
        PositionSpec::Random { extent, seed } => {
            let mut rng = RngStream::new(seed.unwrap_or(cfg.seed), "positions");
            let mut draw = |count: usize| -> Vec<DevicePosition> {
                (0..count)
                    .map(|_| {
                        let x = rng.uniform(0.0, extent[0]);
                        let y = rng.uniform(0.0, extent[1]);
                        let z = rng.uniform(0.0, extent[2]);
                        DevicePosition::new(x, y, z)
                    })
                    .collect()
            };
            let benign = draw(cfg.n_benign);
            let attackers = draw(cfg.n_malicious);
            (benign, attackers)
        }
    }
}

pub fn prepare(cfg: &SimConfig) -> Result<Environment> {
    let (train, test_set) = stage(0, "data", load_dataset(cfg))?;
    let dim = train[0].x.len();
    let datasets = stage(
        0,
        "partition",
        partition_iid(&train, &cfg.sample_sizes(), &mut RngStream::new(cfg.seed, "partitioner")),
    )?;
    let (benign_positions, attacker_positions) = positions(cfg);

    let projector = match &cfg.attack {
        AttackConfig::Avgae(s) if s.identity_projection => Some(Projector::identity(dim)),
        AttackConfig::Avgae(s) => Some(stage(
            0,
            "projection",
            Projector::random(dim, s.resolved_d_feat(dim), &mut RngStream::new(cfg.seed, "projection")),
        )?),
        _ => None,
    };

    let global_init = match cfg.global_init {
        GlobalInit::Zeros => ModelParams::zeros(dim),
        GlobalInit::Normal { std } => {
            let mut rng = RngStream::new(cfg.seed, "global-init");
            ModelParams::from_vec((0..dim).map(|_| std * rng.standard_normal()).collect())
        }
    };

    Ok(Environment {
        datasets,
        test_set,
        dim,
        benign_positions,
        attacker_positions,
        projector,
        global_init,
    })
}

pub fn run_simulation(cfg: &SimConfig) -> Result<Vec<RoundRecord>> {
    let env = prepare(cfg)?;
    run_with_environment(cfg, &env)
}

struct AttackerRound {
    update: ReportedUpdate,
    active: bool,
    diagnostics: Option<AttackerDiagnostics>,
    warning: Option<String>,
}

fn attacker_round(
    cfg: &SimConfig,
    env: &Environment,
    round: usize,
    h: usize,
    global: &ModelParams,
    locals: &[ModelParams],
) -> Result<AttackerRound> {
    let attacker_id = cfg.n_benign + h + 1;
    let mut rng = RngStream::new(cfg.seed, format!("attacker-{attacker_id}/round-{round}"));
    let reported_samples = cfg.attacker_reported_samples();
    let heard = stage(
        round,
        "eavesdrop",
        eavesdrop_set(
            &env.benign_positions,
            &env.attacker_positions[h],
            &cfg.channel.link(),
            cfg.channel.snr_min,
        ),
    )?;
    let overheard: Vec<ModelParams> = heard.iter().map(|id| locals[id - 1].clone()).collect();
    let warning = heard
        .is_empty()
        .then(|| format!("round {round}: attacker {attacker_id} overheard no uploads"));
    let update = |params: ModelParams| ReportedUpdate {
        device_id: attacker_id,
        params,
        reported_samples,
        is_malicious: true,
    };

    let out = match &cfg.attack {
        AttackConfig::None => unreachable!("validation rejects attackers without an attack"),
        AttackConfig::Avgae(settings) => {
            let input = AttackInput {
                attacker_id,
                overheard: &overheard,
                attacker_prev: global,
                previous_global: global,
                projector: env.projector.as_ref().expect("projector built for avgae"),
                reported_samples,
            };
            let outcome = stage(round, "attack", run_attack(input, settings, &mut rng))?;
            AttackerRound {
                active: !outcome.diagnostics.skipped,
                update: outcome.update,
                diagnostics: Some(AttackerDiagnostics {
                    attacker_id,
                    overheard: heard,
                    diagnostics: outcome.diagnostics,
                }),
                warning,
            }
        }
        AttackConfig::Gaussian { sigma } => AttackerRound {
            update: update(stage(round, "attack", gaussian_noise_attack(global, *sigma, &mut rng))?),
            active: true,
            diagnostics: None,
            warning,
        },
        AttackConfig::Signflip { scale } => {
            if overheard.is_empty() {
                AttackerRound {
                    update: update(global.clone()),
                    active: false,
                    diagnostics: None,
                    warning,
                }
            } else {
                let m = stage(round, "attack", mean(&overheard))?;
                AttackerRound {
                    update: update(stage(round, "attack", sign_flip_attack(&m, *scale))?),
                    active: true,
                    diagnostics: None,
                    warning,
                }
            }
        }
    };
    Ok(out)
}

pub fn run_with_environment(cfg: &SimConfig, env: &Environment) -> Result<Vec<RoundRecord>> {
    let kind = cfg.training.loss;
    let settings = cfg.training.settings();
    let mut global = env.global_init.clone();
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let trained: Vec<(ModelParams, f64)> = stage(
            round,
            "local_training",
            env.datasets
                .par_iter()
                .map(|ds| {
                    let mut rng = RngStream::new(cfg.seed, format!("device-{}/round-{round}", ds.device_id));
                    let w = train_local(kind, &global, ds, &settings, &mut rng)?;
                    let loss = local_loss(kind, &w, ds, settings.alpha)?;
                    Ok((w, loss))
                })
                .collect::<Result<Vec<_>>>(),
        )?;
        let locals: Vec<ModelParams> = trained.iter().map(|(w, _)| w.clone()).collect();

        let attackers: Vec<AttackerRound> = (0..cfg.n_malicious)
            .into_par_iter()
            .map(|h| attacker_round(cfg, env, round, h, &global, &locals))
            .collect::<Result<Vec<_>>>()?;

        let mut updates: Vec<ReportedUpdate> = env
            .datasets
            .iter()
            .zip(&locals)
            .map(|(ds, w)| ReportedUpdate {
                device_id: ds.device_id,
                params: w.clone(),
                reported_samples: ds.len() as u64,
                is_malicious: false,
            })
            .collect();
        updates.extend(attackers.iter().map(|a| a.update.clone()));
        let next_global = stage(round, "aggregation", aggregate(&updates))?;

        let per_device = stage(
            round,
            "metrics",
            updates
                .par_iter()
                .map(|u| {
                    let idx = u.device_id - 1;
                    Ok(DeviceRecord {
                        device_id: u.device_id,
                        is_malicious: u.is_malicious,
                        local: u.params.clone(),
                        distance_to_global: euclidean_distance(&u.params, &next_global)?,
                        local_loss: (!u.is_malicious).then(|| trained[idx].1),
                        local_accuracy: test_accuracy(kind, &u.params, &env.test_set)?,
                        attack_active: u.is_malicious && attackers[idx - cfg.n_benign].active,
                    })
                })
                .collect::<Result<Vec<_>>>(),
        )?;
        let accuracy = stage(round, "metrics", test_accuracy(kind, &next_global, &env.test_set))?;

        records.push(RoundRecord {
            round,
            global: next_global.clone(),
            per_device,
            test_accuracy: accuracy,
            attack_diagnostics: attackers.iter().filter_map(|a| a.diagnostics.clone()).collect(),
            warnings: attackers.iter().filter_map(|a| a.warning.clone()).collect(),
        });
        global = next_global;
    }
    Ok(records)
}

/// Attack diagnostics flattened for the per-round CSV.
pub fn diagnostic_rows(records: &[RoundRecord]) -> Vec<(usize, usize, &AttackDiagnostics)> {
    records
        .iter()
        .flat_map(|r| {
            r.attack_diagnostics
                .iter()
                .map(move |d| (r.round, d.attacker_id, &d.diagnostics))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use std::path::Path;

    fn cfg(extra: &[&str]) -> SimConfig {
        let base = "rounds = 2\nn_benign = 3\nsamples_per_device = 50\n[dataset]\nkind = \"synthetic\"\nn_train = 200\nn_test = 100\nd = 4\n";
        let ov: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        SimConfig::from_toml_str(base, Path::new("."), &ov).unwrap()
    }

    #[test]
    fn single_device_single_round_is_plain_training() {
        let c = cfg(&["n_benign=1", "rounds=1"]);
        let env = prepare(&c).unwrap();
        let recs = run_with_environment(&c, &env).unwrap();
        let mut rng = RngStream::new(c.seed, "device-1/round-1");
        let w = train_local(c.training.loss, &env.global_init, &env.datasets[0], &c.training.settings(), &mut rng).unwrap();
        assert_eq!(recs[0].global, w);
        assert_eq!(recs[0].per_device[0].distance_to_global, 0.0);
    }

    #[test]
    fn attacker_ids_follow_benign_ids() {
        let c = cfg(&["n_malicious=2", "attack.kind=\"gaussian\""]);
        let recs = run_simulation(&c).unwrap();
        let ids: Vec<usize> = recs[1].per_device.iter().map(|d| d.device_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5]);
        assert!(recs[1].attackers().all(|d| d.local_loss.is_none() && d.attack_active));
    }

    #[test]
    fn distant_attacker_warns_and_skips() {
        let c = cfg(&[
            "n_malicious=1",
            "attack.kind=\"signflip\"",
            "channel.snr_min=1e30",
        ]);
        let recs = run_simulation(&c).unwrap();
        assert_eq!(recs[0].warnings.len(), 1);
        assert!(!recs[0].attackers().next().unwrap().attack_active);
    }
}
