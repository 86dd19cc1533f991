//! Splitting clients into honest and malicious groups from their confidence scores.
//!
//! ```bash
//! cargo run -p fedsentinel --example detection
//! ```

use std::collections::{BTreeMap, BTreeSet};

use fedsentinel::detection::detect;
use fedsentinel::{detection_metrics, kmeans2_1d, normalize_scores, DetectionConfig};

fn main() -> fedsentinel::Result<()> {
    let c = kmeans2_1d(&[0.1, 0.15, 0.9, 0.95])?;
    println!(
        "centroids of [0.1, 0.15, 0.9, 0.95]: {:.3} / {:.3}",
        c.lower, c.upper
    );

    // Honest clients near e, attackers whose submitted model fits their data poorly.
    let raw: BTreeMap<usize, f64> = [2.71, 2.69, 2.70, 1.20, 2.65, 1.05, 2.71, 0.95]
        .into_iter()
        .enumerate()
        .collect();
    let truth: BTreeSet<usize> = [3, 5, 7].into();
    let scores = normalize_scores(raw)?;
    let outcome = detect(&scores, &DetectionConfig::default())?;
    let (tpr, fpr) = detection_metrics(&outcome, &truth);
    println!("honest {:?}", outcome.honest);
    println!("flagged {:?}", outcome.malicious);
    println!("TPR {tpr:.2} FPR {fpr:.2}");

    // Nearly identical scores: the gap guard keeps everyone.
    let calm: BTreeMap<usize, f64> = [2.7101, 2.7102, 2.7099, 2.7100]
        .into_iter()
        .enumerate()
        .collect();
    let outcome = detect(&normalize_scores(calm)?, &DetectionConfig::default())?;
    println!("no attack: flagged {:?}", outcome.malicious);
    Ok(())
}
