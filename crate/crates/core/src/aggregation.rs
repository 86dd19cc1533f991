//! Global model construction from client reports.
//!
//! - [`fedavg`]: data-length weighted mean of all reports.
//! - [`trimmed_mean`]: coordinate-wise mean after dropping the `floor(beta n)`
//!   largest and smallest values.
//! - [`reweighted_aggregate`]: weighted mean over the honest set only, with
//!   weights combining each client's data share and its normalized confidence.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::confidence::ScoreSet;
use crate::detection::DetectionOutcome;
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::ClientId;

/// One client's round submission as the server sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientReport {
    pub client_id: ClientId,
    pub params: ParamVector,
    pub sigma_raw: f64,
    pub data_length: usize,
}

fn check_reports(reports: &[ClientReport]) -> Result<usize> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no client reports to aggregate".into()))?;
    let dim = first.params.len();
    for r in reports {
        if r.params.len() != dim {
            return Err(Error::Shape(format!(
                "client {} sent {} parameters, expected {dim}",
                r.client_id,
                r.params.len()
            )));
        }
        if r.data_length == 0 {
            return Err(Error::Validation(format!(
                "client {} reported an empty dataset",
                r.client_id
            )));
        }
    }
    Ok(dim)
}

/// `sum_i coeff_i * theta_i`, accumulated in report order.
fn combine<'a>(dim: usize, terms: impl Iterator<Item = (f64, &'a ParamVector)>) -> ParamVector {
    let mut out = vec![0.0; dim];
    for (c, params) in terms {
        for (o, &p) in out.iter_mut().zip(params.iter()) {
            *o += c * p;
        }
    }
    ParamVector::new(out)
}

/// `theta = sum l_i theta_i / sum l_i`.
pub fn fedavg(reports: &[ClientReport]) -> Result<ParamVector> {
    let dim = check_reports(reports)?;
    let total: f64 = reports.iter().map(|r| r.data_length as f64).sum();
    Ok(combine(
        dim,
        reports
            .iter()
            .map(|r| (r.data_length as f64 / total, &r.params)),
    ))
}

/// Coordinate-wise trimmed mean (unweighted).
pub fn trimmed_mean(reports: &[ClientReport], beta: f64) -> Result<ParamVector> {
    let dim = check_reports(reports)?;
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Config(format!(
            "trim fraction must be >= 0, got {beta}"
        )));
    }
    let n = reports.len();
    let trim = (beta * n as f64).floor() as usize;
    if 2 * trim >= n {
        return Err(Error::Config(format!(
            "trimming {trim} per side leaves nothing of {n} reports"
        )));
    }
    let kept = (n - 2 * trim) as f64;
    let mut column = vec![0.0; n];
    let out = (0..dim)
        .map(|j| {
            for (c, r) in column.iter_mut().zip(reports) {
                *c = r.params[j];
            }
            column.sort_unstable_by(f64::total_cmp);
            column[trim..n - trim].iter().sum::<f64>() / kept
        })
        .collect();
    Ok(ParamVector::new(out))
}

/// How the final aggregation uses data lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthWeighting {
    /// `sum w_final l theta / sum w_final l`, with `l` applied on top of the
    /// length share already inside `w_final` (effective weight `~ sigma l^2`).
    #[default]
    Double,
    /// `sum w_final theta / sum w_final` (effective weight `~ sigma l`).
    Single,
}

/// Knobs of [`reweighted_aggregate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReweightOptions {
    pub length_weighting: LengthWeighting,
    /// When `false`, confidence factors are replaced by uniform ones (ablation).
    pub use_confidence: bool,
}

impl Default for ReweightOptions {
    fn default() -> Self {
        Self {
            length_weighting: LengthWeighting::Double,
            use_confidence: true,
        }
    }
}

/// Per-client weights over the honest set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AggregationWeights {
    /// `l_i / sum_H l_j`.
    pub w_orig: BTreeMap<ClientId, f64>,
    /// `sigma_i / sum_H sigma_j` on normalized scores.
    pub r_norm: BTreeMap<ClientId, f64>,
    /// `r_norm * w_orig`.
    pub w_final: BTreeMap<ClientId, f64>,
}

/// Honest-only, confidence re-weighted aggregation.
///
/// Restricted to `outcome.honest`, each client gets `w_orig = l_i / sum l`,
/// `r_norm = sigma_i / sum sigma` (normalized confidences, uniform if they all
/// vanish) and `w_final = r_norm * w_orig`; the result is
/// `sum w_final l theta / sum w_final l`. Reports from flagged clients are
/// never read.
pub fn reweighted_aggregate(
    reports: &[ClientReport],
    outcome: &DetectionOutcome,
    scores: &ScoreSet,
    opts: ReweightOptions,
) -> Result<(ParamVector, AggregationWeights)> {
    aggregate_honest(reports, outcome, scores.normalized(), opts)
}

fn aggregate_honest(
    reports: &[ClientReport],
    outcome: &DetectionOutcome,
    sigma: &BTreeMap<ClientId, f64>,
    opts: ReweightOptions,
) -> Result<(ParamVector, AggregationWeights)> {
    let honest: Vec<&ClientReport> = reports
        .iter()
        .filter(|r| outcome.honest.contains(&r.client_id))
        .collect();
    if honest.is_empty() {
        return Err(Error::NoHonestClients);
    }
    let dim = check_reports(reports)?;

    let total_len: f64 = honest.iter().map(|r| r.data_length as f64).sum();
    let factors: Vec<f64> = honest
        .iter()
        .map(|r| {
            if opts.use_confidence {
                sigma.get(&r.client_id).copied().ok_or_else(|| {
                    Error::Validation(format!("no confidence score for client {}", r.client_id))
                })
            } else {
                Ok(1.0)
            }
        })
        .collect::<Result<_>>()?;
    let factor_sum: f64 = factors.iter().sum();
    let uniform = !(factor_sum > 0.0);

    let mut weights = AggregationWeights::default();
    let mut coeffs = Vec::with_capacity(honest.len());
    for (r, &f) in honest.iter().zip(&factors) {
        let w_orig = r.data_length as f64 / total_len;
        let r_norm = if uniform {
            1.0 / honest.len() as f64
        } else {
            f / factor_sum
        };
        let w_final = r_norm * w_orig;
        weights.w_orig.insert(r.client_id, w_orig);
        weights.r_norm.insert(r.client_id, r_norm);
        weights.w_final.insert(r.client_id, w_final);
        coeffs.push(match opts.length_weighting {
            LengthWeighting::Double => w_final * r.data_length as f64,
            LengthWeighting::Single => w_final,
        });
    }
    let norm: f64 = coeffs.iter().sum();
    if !(norm > 0.0) {
        // Only reachable through underflow.
        return Err(Error::Validation("aggregation weights vanished".into()));
    }
    let theta = combine(
        dim,
        honest
            .iter()
            .zip(&coeffs)
            .map(|(r, &c)| (c / norm, &r.params)),
    );
    Ok((theta, weights))
}

/// Whether scaling every honest confidence by `factor` leaves the re-weighted
/// aggregate unchanged within `1e-10`.
pub fn scale_invariance_check(
    reports: &[ClientReport],
    outcome: &DetectionOutcome,
    scores: &ScoreSet,
    factor: f64,
    opts: ReweightOptions,
) -> Result<bool> {
    let (base, _) = reweighted_aggregate(reports, outcome, scores, opts)?;
    let scaled: BTreeMap<ClientId, f64> = scores
        .normalized()
        .iter()
        .map(|(&id, &s)| {
            (
                id,
                if outcome.honest.contains(&id) {
                    s * factor
                } else {
                    s
                },
            )
        })
        .collect();
    let (other, _) = aggregate_honest(reports, outcome, &scaled, opts)?;
    Ok(base
        .iter()
        .zip(other.iter())
        .all(|(a, b)| (a - b).abs() <= 1e-10))
}

/// [`reweighted_aggregate`] with caller-supplied confidences in place of the
/// normalized scores.
pub fn aggregate_with_confidences(
    reports: &[ClientReport],
    outcome: &DetectionOutcome,
    sigma: &BTreeMap<ClientId, f64>,
    opts: ReweightOptions,
) -> Result<(ParamVector, AggregationWeights)> {
    aggregate_honest(reports, outcome, sigma, opts)
}
