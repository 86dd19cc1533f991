//! Run output files.
//!
//! A run directory holds:
//!
//! - `metrics.csv`: `round,accuracy,tpr,fpr,honest_count`, one row per round;
//!   empty cells mark rounds without evaluation or defenses without detection.
//! - `scores.csv`: `round,client_id,sigma_raw,sigma_norm,flagged,mu_lower,mu_upper`.
//! - `weights.csv` (only with `dump_weights`): `round,client_id,w_orig,r_norm,w_final`.
//! - `run.json`: the whole [`RunReport`], including the resolved configuration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::simulator::RunReport;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const SIDECAR_FILE: &str = "run.json";

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde {
            path: path.into(),
            reason: format!("{other:?}"),
        },
    }
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the metrics CSV only.
pub fn write_metrics_csv(report: &RunReport, path: &Path) -> Result<()> {
    write_csv(
        path,
        &["round", "accuracy", "tpr", "fpr", "honest_count"],
        report.rounds.iter().map(|r| {
            vec![
                r.round.to_string(),
                cell(r.accuracy),
                cell(r.tpr),
                cell(r.fpr),
                r.honest_count.to_string(),
            ]
        }),
    )
}

/// Writes every file of a run into `dir`, creating it if needed.
pub fn write_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    write_metrics_csv(report, &dir.join(METRICS_FILE))?;

    write_csv(
        &dir.join(SCORES_FILE),
        &[
            "round",
            "client_id",
            "sigma_raw",
            "sigma_norm",
            "flagged",
            "mu_lower",
            "mu_upper",
        ],
        report.rounds.iter().flat_map(|r| {
            r.clients.iter().map(move |c| {
                vec![
                    r.round.to_string(),
                    c.client_id.to_string(),
                    c.sigma_raw.to_string(),
                    c.sigma_norm.to_string(),
                    u8::from(c.flagged).to_string(),
                    cell(r.mu_lower),
                    cell(r.mu_upper),
                ]
            })
        }),
    )?;

    if report.config.dump_weights {
        write_csv(
            &dir.join(WEIGHTS_FILE),
            &["round", "client_id", "w_orig", "r_norm", "w_final"],
            report.rounds.iter().flat_map(|r| {
                r.weights.iter().flat_map(move |w| {
                    w.w_final.iter().map(move |(id, wf)| {
                        vec![
                            r.round.to_string(),
                            id.to_string(),
                            w.w_orig[id].to_string(),
                            w.r_norm[id].to_string(),
                            wf.to_string(),
                        ]
                    })
                })
            }),
        )?;
    }

    let sidecar = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Serde {
        path: sidecar.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
}

/// Reloads a run from its JSON sidecar.
pub fn read_report(dir: impl AsRef<Path>) -> Result<RunReport> {
    let path = dir.as_ref().join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde {
        path,
        reason: e.to_string(),
    })
}
