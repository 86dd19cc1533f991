//! Closed-form per-sample confidence scores and their per-client aggregation.
//!
//! A sample with task loss `L` gets the confidence
//!
//! ```text
//! sigma = exp(-W0(0.5 * max(-2/e, (L - ln C) / lambda)))
//! ```
//!
//! where `W0` is the principal branch of the Lambert W function and `C` the
//! class count. `sigma` is `1` at chance-level loss `ln C`, saturates at `e`
//! for confidently fitted samples and decays towards `0` as the loss grows.
//! A client's score is the mean over its local samples; scores are then
//! min-max scaled across clients before clustering.

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClientId;

/// `-1/e`, the branch point of `W0`.
pub const BRANCH_POINT: f64 = -1.0 / E;

const DOMAIN_SLACK: f64 = 1e-12;
const MAX_HALLEY_STEPS: usize = 64;

/// Principal branch of the Lambert W function: the `w >= -1` solving `w * e^w = x`.
///
/// Halley iteration seeded with `ln(1 + x)` away from the branch point and with
/// the branch-point series `-1 + p - p^2/3 + 11 p^3/72`, `p = sqrt(2 (e x + 1))`,
/// close to it. Arguments up to `1e-12` below `-1/e` are treated as the branch point.
pub fn lambert_w0(x: f64) -> Result<f64> {
    if x.is_nan() || x < BRANCH_POINT - DOMAIN_SLACK {
        return Err(Error::Domain(x));
    }
    if x <= BRANCH_POINT {
        return Ok(-1.0);
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(f64::INFINITY);
    }

    let mut w = if x < -0.25 {
        let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if x < 3.0 {
        x.ln_1p()
    } else {
        // ln x - ln ln x is a much closer start for large arguments.
        let l = x.ln();
        l - l.ln()
    };

    for _ in 0..MAX_HALLEY_STEPS {
        let ew = w.exp();
        let f = w.mul_add(ew, -x);
        let wp1 = w + 1.0;
        if wp1.abs() < f64::EPSILON {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = (w - step).max(-1.0);
        if next == w || (next - w).abs() <= 4.0 * f64::EPSILON * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(polish(w, x))
}

/// Picks the neighbouring float with the smallest computed residual.
fn polish(w: f64, x: f64) -> f64 {
    let residual = |v: f64| v.mul_add(v.exp(), -x).abs();
    let mut best = w;
    let mut best_r = residual(w);
    let mut cand = w;
    for _ in 0..4 {
        cand = next_down(cand);
        let r = residual(cand);
        if r < best_r && cand >= -1.0 {
            best = cand;
            best_r = r;
        }
    }
    cand = w;
    for _ in 0..4 {
        cand = next_up(cand);
        let r = residual(cand);
        if r < best_r {
            best = cand;
            best_r = r;
        }
    }
    best
}

fn next_up(v: f64) -> f64 {
    if v == 0.0 {
        return f64::from_bits(1);
    }
    let bits = v.to_bits();
    f64::from_bits(if v > 0.0 { bits + 1 } else { bits - 1 })
}

fn next_down(v: f64) -> f64 {
    -next_up(-v)
}

/// Hyperparameters of the confidence closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceConfig {
    pub lambda: f64,
    pub n_classes: usize,
}

impl ConfidenceConfig {
    pub fn new(lambda: f64, n_classes: usize) -> Result<Self> {
        let cfg = Self { lambda, n_classes };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!(
                "confidence scoring needs at least 2 classes, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    /// The loss below which the clip is active and the confidence saturates at `e`.
    pub fn saturation_loss(&self) -> f64 {
        (self.n_classes as f64).ln() - 2.0 * self.lambda / E
    }
}

/// Confidence of one sample with task loss `loss`; lies in `(0, e]`.
pub fn sample_confidence(loss: f64, cfg: &ConfidenceConfig) -> f64 {
    let scaled = (loss - (cfg.n_classes as f64).ln()) / cfg.lambda;
    let arg = 0.5 * scaled.max(-2.0 / E);
    let w = lambert_w0(arg).expect("clipped argument stays in the W0 domain");
    (-w).exp()
}

/// Mean sample confidence of a client's local losses.
pub fn client_confidence(losses: &[f64], cfg: &ConfidenceConfig) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Validation(
            "client confidence needs at least one sample loss".into(),
        ));
    }
    let total: f64 = losses.iter().map(|&l| sample_confidence(l, cfg)).sum();
    Ok(total / losses.len() as f64)
}

/// Raw per-client confidences and their min-max normalized counterparts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    raw: BTreeMap<ClientId, f64>,
    normalized: BTreeMap<ClientId, f64>,
    degenerate: bool,
}

impl ScoreSet {
    pub fn raw(&self) -> &BTreeMap<ClientId, f64> {
        &self.raw
    }

    pub fn normalized(&self) -> &BTreeMap<ClientId, f64> {
        &self.normalized
    }

    /// `true` when every raw score was identical (no spread to normalize).
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// `max - min` of the raw scores.
    pub fn raw_spread(&self) -> f64 {
        let (lo, hi) = min_max(self.raw.values().copied());
        hi - lo
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn client_ids(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.raw.keys().copied()
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Min-max scales `raw` to `[0, 1]`. Identical scores all map to `1.0` and mark
/// the set as degenerate.
pub fn normalize_scores(raw: BTreeMap<ClientId, f64>) -> Result<ScoreSet> {
    if raw.is_empty() {
        return Err(Error::Validation(
            "no confidence scores to normalize".into(),
        ));
    }
    if let Some((id, v)) = raw.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "client {id} reported a non-finite confidence {v}"
        )));
    }
    let (lo, hi) = min_max(raw.values().copied());
    let degenerate = hi == lo;
    let normalized = raw
        .iter()
        .map(|(&id, &v)| {
            let n = if degenerate {
                1.0
            } else {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            };
            (id, n)
        })
        .collect();
    Ok(ScoreSet {
        raw,
        normalized,
        degenerate,
    })
}
