//! Per-sample confidence scores and the Lambert W function behind them.
//!
//! ```bash
//! cargo run -p fedsentinel --example confidence_scores
//! ```

use std::collections::BTreeMap;

use fedsentinel::{
    client_confidence, lambert_w0, normalize_scores, sample_confidence, ConfidenceConfig,
};

fn main() -> fedsentinel::Result<()> {
    for x in [
        -1.0 / std::f64::consts::E,
        -0.2,
        0.0,
        1.0,
        std::f64::consts::E,
        100.0,
        1e6,
    ] {
        let w = lambert_w0(x)?;
        println!(
            "W({x:>12.6}) = {w:>10.6}   w e^w - x = {:+.1e}",
            w * w.exp() - x
        );
    }

    let cfg = ConfidenceConfig::new(1.0, 10)?;
    println!(
        "\nsaturation below loss {:.4} (log C = {:.4})",
        cfg.saturation_loss(),
        (10f64).ln()
    );
    for loss in [0.0, 1.0, 1.6, 2.0, 10f64.ln(), 3.0, 5.0, 10.0] {
        println!(
            "loss {loss:>6.3} -> sigma {:.4}",
            sample_confidence(loss, &cfg)
        );
    }

    // A client that fits its data well versus one whose model disagrees with its labels.
    let good = [0.05, 0.1, 0.3, 0.02, 0.8];
    let bad = [2.5, 3.1, 1.9, 4.0, 2.2];
    let mut raw = BTreeMap::new();
    raw.insert(0, client_confidence(&good, &cfg)?);
    raw.insert(1, client_confidence(&bad, &cfg)?);
    raw.insert(2, client_confidence(&[0.4, 0.6, 2.6, 0.1, 0.3], &cfg)?);
    let scores = normalize_scores(raw)?;
    for id in scores.client_ids() {
        println!(
            "client {id}: raw {:.4} normalized {:.4}",
            scores.raw()[&id],
            scores.normalized()[&id]
        );
    }
    Ok(())
}
