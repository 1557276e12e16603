//! Result files.
//!
//! `rounds.csv`, `summary.json` and `attack_diag.csv` are byte-deterministic
//! for a given config; anything run-dependent (wall-clock, thread count) goes
//! to `timing.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::metrics::{trace_summary, AccuracyBand, RoundRecord, StealthRate};
use crate::sim::diagnostic_rows;

pub const ROUNDS_CSV: &str = "rounds.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const ATTACK_DIAG_CSV: &str = "attack_diag.csv";
pub const LOCAL_ACCURACY_CSV: &str = "local_accuracy.csv";
pub const TIMING_JSON: &str = "timing.json";

#[derive(Debug, Serialize)]
pub struct Summary {
    pub config: serde_json::Value,
    pub rounds: usize,
    pub devices: usize,
    pub final_global_accuracy: f64,
    pub final_mean_benign_loss: Option<f64>,
    pub accuracy_band: AccuracyBand,
    pub stealth: Vec<StealthRate>,
    pub attack_skips: usize,
    pub warnings: Vec<String>,
    pub accuracy_series: Vec<f64>,
}

pub fn summarize(records: &[RoundRecord], cfg: &SimConfig) -> Result<Summary> {
    let trace = trace_summary(records, cfg.eval_last_k)?;
    Ok(Summary {
        config: cfg.echo(),
        rounds: records.len(),
        devices: cfg.n_benign + cfg.n_malicious,
        final_global_accuracy: trace.final_global_accuracy,
        final_mean_benign_loss: trace.final_mean_benign_loss,
        accuracy_band: trace.accuracy_band,
        stealth: trace.stealth,
        attack_skips: diagnostic_rows(records).iter().filter(|(_, _, d)| d.skipped).count(),
        warnings: records.iter().flat_map(|r| r.warnings.iter().cloned()).collect(),
        accuracy_series: trace.accuracy_series,
    })
}

#[derive(Debug, Serialize)]
struct Timing {
    wall_clock_seconds: f64,
    threads: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes every result file into `dir` (created if missing) and returns the
/// paths written.
pub fn emit_outputs(
    records: &[RoundRecord],
    cfg: &SimConfig,
    dir: &Path,
    wall_clock: Option<Duration>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();

    let path = dir.join(ROUNDS_CSV);
    write_csv(
        &path,
        &["round", "device_id", "is_malicious", "distance_to_global", "local_loss", "test_accuracy_global"],
        records.iter().flat_map(|r| {
            r.per_device.iter().map(move |d| {
                vec![
                    r.round.to_string(),
                    d.device_id.to_string(),
                    d.is_malicious.to_string(),
                    d.distance_to_global.to_string(),
                    opt(d.local_loss),
                    r.test_accuracy.to_string(),
                ]
            })
        }),
    )?;
    written.push(path);

    let path = dir.join(LOCAL_ACCURACY_CSV);
    write_csv(
        &path,
        &["round", "device_id", "is_malicious", "local_test_accuracy"],
        records.iter().flat_map(|r| {
            r.per_device.iter().map(move |d| {
                vec![
                    r.round.to_string(),
                    d.device_id.to_string(),
                    d.is_malicious.to_string(),
                    d.local_accuracy.to_string(),
                ]
            })
        }),
    )?;
    written.push(path);

    let diag = diagnostic_rows(records);
    let attack_diag = dir.join(ATTACK_DIAG_CSV);
    if diag.is_empty() {
        // A stale file from an earlier run in the same directory would lie.
        if attack_diag.exists() {
            fs::remove_file(&attack_diag).map_err(|e| Error::io(format!("removing {}", attack_diag.display()), e))?;
        }
    } else {
        write_csv(
            &attack_diag,
            &["round", "attacker_id", "delta_g_initial", "delta_g_final", "gamma_model", "skipped"],
            diag.iter().map(|(round, id, d)| {
                vec![
                    round.to_string(),
                    id.to_string(),
                    opt(d.delta_g_initial()),
                    opt(d.delta_g_final()),
                    opt(d.gamma_model),
                    d.skipped.to_string(),
                ]
            }),
        )?;
        written.push(attack_diag);
    }

    let path = dir.join(SUMMARY_JSON);
    let mut text = serde_json::to_string_pretty(&summarize(records, cfg)?)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    written.push(path);

    if let Some(elapsed) = wall_clock {
        let path = dir.join(TIMING_JSON);
        let timing = Timing {
            wall_clock_seconds: elapsed.as_secs_f64(),
            threads: rayon::current_num_threads(),
        };
        fs::write(&path, serde_json::to_string_pretty(&timing)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    Ok(written)
}
