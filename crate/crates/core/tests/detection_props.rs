use std::collections::{BTreeMap, BTreeSet};

use fedsentinel::detection::{classify, detect, Centroids};
use fedsentinel::{
    detection_metrics, kmeans2_1d, normalize_scores, DetectionConfig, DetectionOutcome,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Best split of the sorted values into a prefix and a suffix by within-cluster SSE.
fn brute_force_centroids(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let sse = |s: &[f64]| {
        let m = mean(s);
        s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    (1..v.len())
        .map(|k| (sse(&v[..k]) + sse(&v[k..]), mean(&v[..k]), mean(&v[k..])))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
}

fn sse_of(values: &[f64], c: &Centroids) -> f64 {
    values
        .iter()
        .map(|&s| (s - c.lower).powi(2).min((s - c.upper).powi(2)))
        .sum()
}

fn no_guard() -> DetectionConfig {
    DetectionConfig { gap_threshold: 0.0 }
}

#[test]
fn kmeans_reference_fixtures() {
    let c = kmeans2_1d(&[0.1, 0.15, 0.9, 0.95]).unwrap();
    let (_, lo, hi) = brute_force_centroids(&[0.1, 0.15, 0.9, 0.95]);
    assert!((c.lower - 0.125).abs() < 1e-12 && (c.upper - 0.925).abs() < 1e-12);
    assert!((c.lower - lo).abs() < 1e-12 && (c.upper - hi).abs() < 1e-12);

    let c = kmeans2_1d(&[0.0, 1.0]).unwrap();
    assert_eq!((c.lower, c.upper), (0.0, 1.0));

    let c = kmeans2_1d(&[0.4; 5]).unwrap();
    assert!(c.degenerate);
    assert_eq!(c.lower, c.upper);

    assert!(kmeans2_1d(&[0.3]).is_err());
}

#[test]
fn classification_reference_fixtures() {
    let raw: BTreeMap<usize, f64> = [(0, 0.0), (1, 0.9), (2, 0.5), (3, 1.0)].into();
    let scores = normalize_scores(raw).unwrap();
    let c = Centroids {
        lower: 0.125,
        upper: 0.875,
        degenerate: false,
    };
    let out = classify(&scores, &c, &no_guard());
    assert!(out.honest.contains(&1));
    // 0.5 sits exactly halfway between the centroids.
    assert!(out.malicious.contains(&2));

    let flat: BTreeMap<usize, f64> = [(0, 2.0), (1, 2.0), (2, 2.0)].into();
    let out = detect(
        &normalize_scores(flat).unwrap(),
        &DetectionConfig::default(),
    )
    .unwrap();
    assert_eq!(out.honest.len(), 3);
    assert!(out.malicious.is_empty());
}

#[test]
fn metrics_reference_fixtures() {
    let truth: BTreeSet<usize> = [1, 2].into();
    let outcome = |m: &[usize]| DetectionOutcome {
        honest: (0..4).filter(|i| !m.contains(i)).collect(),
        malicious: m.iter().copied().collect(),
        mu_lower: 0.0,
        mu_upper: 1.0,
        degenerate: false,
    };
    assert_eq!(detection_metrics(&outcome(&[1, 2]), &truth), (1.0, 0.0));
    assert_eq!(detection_metrics(&outcome(&[]), &truth), (0.0, 0.0));
    assert_eq!(detection_metrics(&outcome(&[2, 3]), &truth), (0.5, 0.5));
}

#[test]
fn bimodal_scores_are_split_exactly() {
    let low = Normal::new(0.2, 0.05).unwrap();
    let high = Normal::new(0.8, 0.05).unwrap();
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut raw = BTreeMap::new();
        let mut truth = BTreeSet::new();
        for id in 0..20 {
            if id % 3 == 0 {
                raw.insert(id, low.sample(&mut rng));
                truth.insert(id);
            } else {
                raw.insert(id, high.sample(&mut rng));
            }
        }
        let out = detect(&normalize_scores(raw).unwrap(), &DetectionConfig::default()).unwrap();
        assert_eq!(out.malicious, truth, "trial {trial}");
    }
}

#[test]
fn tiny_spread_abstains() {
    let raw: BTreeMap<usize, f64> = [(0, 2.700), (1, 2.701), (2, 2.7005), (3, 2.71)].into();
    let out = detect(&normalize_scores(raw).unwrap(), &DetectionConfig::default()).unwrap();
    assert!(out.degenerate);
    assert!(out.malicious.is_empty());
}

proptest! {
    #[test]
    fn kmeans_ends_at_a_lloyd_fixpoint(values in prop::collection::vec(0.0f64..1.0, 2..12)) {
        let c = kmeans2_1d(&values).unwrap();
        prop_assume!(!c.degenerate);
        prop_assert!(c.lower <= c.upper);
        let (lo, hi): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&s| (s - c.upper).abs() >= (s - c.lower).abs());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        prop_assert!(!lo.is_empty() && !hi.is_empty());
        prop_assert!((mean(&lo) - c.lower).abs() < 1e-12);
        prop_assert!((mean(&hi) - c.upper).abs() < 1e-12);
        let (best, _, _) = brute_force_centroids(&values);
        prop_assert!(sse_of(&values, &c) >= best - 1e-12);
    }

    #[test]
    fn outcome_partitions_clients(values in prop::collection::vec(-3.0f64..3.0, 1..20), gap in 0.0f64..0.2) {
        let raw: BTreeMap<usize, f64> = values.iter().copied().enumerate().collect();
        let out = detect(&normalize_scores(raw).unwrap(), &DetectionConfig { gap_threshold: gap }).unwrap();
        prop_assert!(out.honest.is_disjoint(&out.malicious));
        prop_assert_eq!(out.honest.len() + out.malicious.len(), values.len());
        prop_assert!(out.mu_lower <= out.mu_upper);
    }

    #[test]
    fn affine_transforms_do_not_change_the_split(
        values in prop::collection::vec(0.0f64..1.0, 3..16),
        a in 0.01f64..100.0,
        b in -50.0f64..50.0,
    ) {
        let raw: BTreeMap<usize, f64> = values.iter().copied().enumerate().collect();
        let moved: BTreeMap<usize, f64> = raw.iter().map(|(&k, &v)| (k, a * v + b)).collect();
        let base = detect(&normalize_scores(raw).unwrap(), &no_guard()).unwrap();
        let other = detect(&normalize_scores(moved).unwrap(), &no_guard()).unwrap();
        prop_assert_eq!(base.malicious, other.malicious);
    }
}
