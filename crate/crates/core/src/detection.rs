//! Two-way clustering of normalized confidence scores into honest and
//! malicious clients.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::confidence::ScoreSet;
use crate::error::{Error, Result};
use crate::ClientId;

const MAX_LLOYD_ITERS: usize = 100;

/// Cluster centres of a two-way 1-D k-means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub lower: f64,
    pub upper: f64,
    /// All inputs were identical, so no split exists.
    pub degenerate: bool,
}

/// Lloyd's algorithm with k = 2 on a line, initialized at `min` and `max`.
///
/// A point equidistant from both centres joins the lower cluster. Iteration
/// stops at an assignment fixpoint or after 100 rounds.
pub fn kmeans2_1d(scores: &[f64]) -> Result<Centroids> {
    if scores.len() < 2 {
        return Err(Error::Validation(format!(
            "two-way clustering needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("scores must be finite".into()));
    }
    let (mut lower, mut upper) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if lower == upper {
        return Ok(Centroids {
            lower,
            upper,
            degenerate: true,
        });
    }

    let mut assignment: Vec<bool> = Vec::new();
    for _ in 0..MAX_LLOYD_ITERS {
        let next: Vec<bool> = scores
            .iter()
            .map(|&s| (s - upper).abs() < (s - lower).abs())
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let (mut sum_hi, mut n_hi, mut sum_lo, mut n_lo) = (0.0, 0usize, 0.0, 0usize);
        for (&s, &is_upper) in scores.iter().zip(&assignment) {
            if is_upper {
                sum_hi += s;
                n_hi += 1;
            } else {
                sum_lo += s;
                n_lo += 1;
            }
        }
        // With min/max seeding neither cluster can empty out: the max always
        // prefers the upper centre and the min the lower one.
        if n_lo > 0 {
            lower = sum_lo / n_lo as f64;
        }
        if n_hi > 0 {
            upper = sum_hi / n_hi as f64;
        }
    }
    Ok(Centroids {
        lower,
        upper,
        degenerate: false,
    })
}

/// Honest / malicious split of the reporting clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub honest: BTreeSet<ClientId>,
    pub malicious: BTreeSet<ClientId>,
    pub mu_lower: f64,
    pub mu_upper: f64,
    /// Set when detection abstained and every client was declared honest.
    pub degenerate: bool,
}

impl DetectionOutcome {
    /// Everyone honest; used when detection abstains or is disabled.
    pub fn all_honest(
        ids: impl IntoIterator<Item = ClientId>,
        mu_lower: f64,
        mu_upper: f64,
    ) -> Self {
        Self {
            honest: ids.into_iter().collect(),
            malicious: BTreeSet::new(),
            mu_lower,
            mu_upper,
            degenerate: true,
        }
    }

    pub fn is_flagged(&self, id: ClientId) -> bool {
        self.malicious.contains(&id)
    }
}

/// Separation guard for rounds without an attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Minimum centroid separation, in raw confidence units, below which
    /// detection abstains and declares every client honest.
    pub gap_threshold: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            gap_threshold: 0.05,
        }
    }
}

/// Centroid separation expressed in raw-score units.
///
/// Min-max scaling stretches any spread to the full unit interval, so the
/// normalized centroid gap alone cannot tell a real split from noise. Scaling
/// it back by the raw spread measures how far apart the two groups really are.
pub fn raw_separation(scores: &ScoreSet, centroids: &Centroids) -> f64 {
    (centroids.upper - centroids.lower) * scores.raw_spread()
}

/// Assigns each client to the nearer centroid; exact ties are malicious.
///
/// Abstains (all honest) when the scores are degenerate or the raw-unit
/// separation is below `cfg.gap_threshold`.
pub fn classify(
    scores: &ScoreSet,
    centroids: &Centroids,
    cfg: &DetectionConfig,
) -> DetectionOutcome {
    let ids = scores.client_ids();
    if scores.is_degenerate()
        || centroids.degenerate
        || raw_separation(scores, centroids) < cfg.gap_threshold
    {
        return DetectionOutcome::all_honest(ids, centroids.lower, centroids.upper);
    }
    let (honest, malicious) = scores
        .normalized()
        .iter()
        .partition::<Vec<_>, _>(|(_, &s)| {
            (s - centroids.upper).abs() < (s - centroids.lower).abs()
        });
    DetectionOutcome {
        honest: honest.into_iter().map(|(&id, _)| id).collect(),
        malicious: malicious.into_iter().map(|(&id, _)| id).collect(),
        mu_lower: centroids.lower,
        mu_upper: centroids.upper,
        degenerate: false,
    }
}

/// Clusters `scores.normalized()` and classifies every client.
pub fn detect(scores: &ScoreSet, cfg: &DetectionConfig) -> Result<DetectionOutcome> {
    let values: Vec<f64> = scores.normalized().values().copied().collect();
    if values.len() < 2 {
        let v = values.first().copied().unwrap_or(1.0);
        return Ok(DetectionOutcome::all_honest(scores.client_ids(), v, v));
    }
    let centroids = kmeans2_1d(&values)?;
    Ok(classify(scores, &centroids, cfg))
}

/// True and false positive rates of a detection outcome against ground truth.
///
/// TPR is `1.0` when there is nothing to detect; FPR is `0.0` when every
/// client is malicious.
pub fn detection_metrics(outcome: &DetectionOutcome, truth: &BTreeSet<ClientId>) -> (f64, f64) {
    let tpr = if truth.is_empty() {
        1.0
    } else {
        outcome.malicious.intersection(truth).count() as f64 / truth.len() as f64
    };
    let n_honest_truth = outcome
        .honest
        .iter()
        .chain(&outcome.malicious)
        .filter(|id| !truth.contains(id))
        .count();
    let fpr = if n_honest_truth == 0 {
        0.0
    } else {
        outcome.malicious.difference(truth).count() as f64 / n_honest_truth as f64
    };
    (tpr, fpr)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::confidence::normalize_scores;

    fn outcome(honest: &[ClientId], malicious: &[ClientId]) -> DetectionOutcome {
        DetectionOutcome {
            honest: honest.iter().copied().collect(),
            malicious: malicious.iter().copied().collect(),
            mu_lower: 0.0,
            mu_upper: 1.0,
            degenerate: false,
        }
    }

    #[test]
    fn needs_two_scores() {
        assert!(kmeans2_1d(&[0.3]).is_err());
    }

    #[test]
    fn two_points_are_their_own_centroids() {
        let c = kmeans2_1d(&[0.0, 1.0]).unwrap();
        assert_eq!((c.lower, c.upper, c.degenerate), (0.0, 1.0, false));
    }

    #[test]
    fn equal_scores_are_degenerate() {
        let c = kmeans2_1d(&[0.4; 5]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.lower, c.upper);
    }

    #[test]
    fn nearer_upper_is_honest_and_ties_are_malicious() {
        let scores =
            normalize_scores(BTreeMap::from([(0, 0.0), (1, 0.5), (2, 0.9), (3, 1.0)])).unwrap();
        let c = Centroids {
            lower: 0.125,
            upper: 0.925,
            degenerate: false,
        };
        let out = classify(&scores, &c, &DetectionConfig { gap_threshold: 0.0 });
        assert!(out.honest.contains(&2));
        assert!(out.malicious.contains(&1), "0.5 is equidistant");
        assert!(out.malicious.contains(&0));
    }

    #[test]
    fn degenerate_scores_are_all_honest() {
        let scores = normalize_scores(BTreeMap::from([(0, 2.0), (1, 2.0), (2, 2.0)])).unwrap();
        let out = detect(&scores, &DetectionConfig::default()).unwrap();
        assert_eq!(out.honest.len(), 3);
        assert!(out.malicious.is_empty());
        assert!(out.degenerate);
    }

    #[test]
    fn small_raw_spread_abstains() {
        let raw = BTreeMap::from([(0, 2.70), (1, 2.69), (2, 2.68), (3, 2.71)]);
        let scores = normalize_scores(raw).unwrap();
        let out = detect(&scores, &DetectionConfig::default()).unwrap();
        assert!(out.malicious.is_empty());
        let strict = detect(&scores, &DetectionConfig { gap_threshold: 0.0 }).unwrap();
        assert!(!strict.malicious.is_empty());
    }

    #[test]
    fn metric_examples() {
        let truth: BTreeSet<ClientId> = [1, 2].into();
        assert_eq!(
            detection_metrics(&outcome(&[0, 3], &[1, 2]), &truth),
            (1.0, 0.0)
        );
        assert_eq!(
            detection_metrics(&outcome(&[0, 1, 2, 3], &[]), &truth),
            (0.0, 0.0)
        );
        assert_eq!(
            detection_metrics(&outcome(&[0, 1], &[2, 3]), &truth),
            (0.5, 0.5)
        );
        assert_eq!(
            detection_metrics(&outcome(&[0, 1], &[]), &BTreeSet::new()),
            (1.0, 0.0)
        );
    }
}
