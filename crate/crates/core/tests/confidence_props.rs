use std::collections::BTreeMap;
use std::f64::consts::E;

use fedsentinel::confidence::BRANCH_POINT;
use fedsentinel::{
    client_confidence, lambert_w0, normalize_scores, sample_confidence, ConfidenceConfig, Error,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain Newton iteration on `w e^w - x`, started away from the branch point.
fn newton_w(x: f64) -> f64 {
    let mut w = if x > 1.0 { x.ln() } else { 0.0 };
    for _ in 0..200 {
        let f = w * w.exp() - x;
        let step = f / ((w + 1.0) * w.exp());
        w -= step;
        if step.abs() < 1e-15 {
            break;
        }
    }
    w
}

/// Independent closed form: `sigma = exp(-W(max(-2/e, (loss - ln C) / lambda) / 2))`.
fn oracle_sigma(loss: f64, lambda: f64, c: usize) -> f64 {
    let y = 0.5 * ((loss - (c as f64).ln()) / lambda).max(-2.0 / E);
    if y.abs() < 1e-300 {
        return 1.0;
    }
    if y <= -1.0 / E {
        return E;
    }
    let w = if y > -0.25 { newton_w(y) } else { bisect_w(y) };
    (-w).exp()
}

/// Bisection on `[-1, 0]` for arguments near the branch point, where Newton stalls.
fn bisect_w(x: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid * mid.exp() < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn lambert_reference_points() {
    assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
    assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-12);
    assert!((lambert_w0(BRANCH_POINT).unwrap() + 1.0).abs() < 1e-12);
    let w1 = lambert_w0(1.0).unwrap();
    assert!((w1 - newton_w(1.0)).abs() < 1e-12);
    assert!((w1 - 0.5671432904).abs() < 1e-10);
    assert!(matches!(lambert_w0(-0.5), Err(Error::Domain(_))));
    assert!(lambert_w0(f64::NAN).is_err());
}

#[test]
fn lambert_agrees_with_newton_on_positive_axis() {
    for k in 0..200 {
        let x = 10f64.powf(-6.0 + 12.0 * k as f64 / 199.0);
        let w = lambert_w0(x).unwrap();
        let reference = newton_w(x);
        assert!(
            (w - reference).abs() <= 1e-12 * reference.abs().max(1.0),
            "x={x}"
        );
    }
}

#[test]
fn confidence_reference_points() {
    let cfg = ConfidenceConfig::new(1.0, 10).unwrap();
    let ln_c = 10f64.ln();
    assert!((sample_confidence(ln_c, &cfg) - 1.0).abs() < 1e-12);
    assert!((sample_confidence(0.0, &cfg) - E).abs() < 1e-12);
    let s = sample_confidence(ln_c + 2.0, &cfg);
    assert!((s - (-lambert_w0(1.0).unwrap()).exp()).abs() < 1e-12);
    assert!((s - 0.5672).abs() < 1e-4);
    assert!((cfg.saturation_loss() - (ln_c - 2.0 / E)).abs() < 1e-12);
}

#[test]
fn client_confidence_is_the_sample_mean() {
    let cfg = ConfidenceConfig::new(0.7, 5).unwrap();
    assert!((client_confidence(&[5f64.ln(); 4], &cfg).unwrap() - 1.0).abs() < 1e-12);
    let losses = [0.1, 1.4, 2.0, 3.3, 7.5];
    let mean = losses
        .iter()
        .map(|&l| sample_confidence(l, &cfg))
        .sum::<f64>()
        / 5.0;
    assert!((client_confidence(&losses, &cfg).unwrap() - mean).abs() < 1e-12);
    assert!(client_confidence(&[], &cfg).is_err());
}

#[test]
fn random_losses_match_scalar_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (lambda, c) in [(1.0, 10), (0.25, 10), (3.0, 2)] {
        let cfg = ConfidenceConfig::new(lambda, c).unwrap();
        let losses: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..16.2)).collect();
        for &l in &losses {
            let got = sample_confidence(l, &cfg);
            let want = oracle_sigma(l, lambda, c);
            assert!(
                (got - want).abs() < 1e-9,
                "loss {l}, lambda {lambda}: {got} vs {want}"
            );
        }
        let mean = losses
            .iter()
            .map(|&l| oracle_sigma(l, lambda, c))
            .sum::<f64>()
            / 1000.0;
        assert!((client_confidence(&losses, &cfg).unwrap() - mean).abs() < 1e-9);
    }
}

#[test]
fn normalization_examples() {
    let raw: BTreeMap<usize, f64> = [(0, 1.0), (1, 2.0), (2, 3.0)].into();
    let s = normalize_scores(raw).unwrap();
    assert_eq!(
        s.normalized().values().copied().collect::<Vec<_>>(),
        vec![0.0, 0.5, 1.0]
    );
    let flat: BTreeMap<usize, f64> = [(4, 2.5), (9, 2.5)].into();
    let s = normalize_scores(flat).unwrap();
    assert!(s.is_degenerate());
    assert!(s.normalized().values().all(|&v| v == 1.0));
    assert!(normalize_scores(BTreeMap::new()).is_err());
}

proptest! {
    #[test]
    fn lambert_round_trip(t in 0.0f64..1.0) {
        // Covers [-1/e, 1e6] with a log-like spacing on the positive side.
        let x = if t < 0.3 { BRANCH_POINT * (1.0 - t / 0.3) } else { 10f64.powf(-8.0 + 14.0 * (t - 0.3) / 0.7) };
        let w = lambert_w0(x).unwrap();
        prop_assert!(w >= -1.0);
        let tol = 1e-10 * x.abs().max(1.0);
        prop_assert!((w * w.exp() - x).abs() <= tol, "x={} w={}", x, w);
    }

    #[test]
    fn sigma_is_bounded_and_monotone(
        a in 0.0f64..30.0,
        b in 0.0f64..30.0,
        lambda in 0.05f64..5.0,
        c in 2usize..100,
    ) {
        let cfg = ConfidenceConfig::new(lambda, c).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (sample_confidence(lo, &cfg), sample_confidence(hi, &cfg));
        prop_assert!(s_lo > 0.0 && s_lo <= E + 1e-15);
        prop_assert!(s_hi <= s_lo);
        let clip = cfg.saturation_loss();
        if hi <= clip {
            prop_assert!((s_hi - E).abs() < 1e-12);
        }
        if lo > clip && hi - lo > 1e-6 {
            prop_assert!(s_hi < s_lo);
        }
    }

    #[test]
    fn normalization_preserves_order(values in prop::collection::vec(-5.0f64..5.0, 2..20)) {
        let raw: BTreeMap<usize, f64> = values.iter().copied().enumerate().collect();
        let s = normalize_scores(raw.clone()).unwrap();
        for (i, a) in &raw {
            for (j, b) in &raw {
                if *a < *b - 1e-9 {
                    prop_assert!(s.normalized()[i] < s.normalized()[j]);
                }
            }
        }
        prop_assert!(s.normalized().values().all(|v| (0.0..=1.0).contains(v)));
        if !s.is_degenerate() {
            let again = normalize_scores(s.normalized().clone()).unwrap();
            for (k, v) in again.normalized() {
                prop_assert!((v - s.normalized()[k]).abs() < 1e-12);
            }
        }
    }
}
