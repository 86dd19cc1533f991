//! Confidence re-weighting versus a plain honest-set average at 75% LIE attackers,
//! and the effect of the confidence scale lambda.
//!
//! ```bash
//! cargo run --release -p fedsentinel --example ablation -- [seed]
//! ```

use std::path::PathBuf;

use fedsentinel::{run_with_data, AttackKind, DataSource, Defense, SimulationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse())?;
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk");
    let mut cfg = SimulationConfig::desk(DataSource::Idx { dir }, seed)?;
    cfg.attack.kind = AttackKind::Lie;
    cfg.defense = Defense::Confidence;
    cfg.malicious_fraction = 0.75;
    if let Ok(rounds) = std::env::var("ROUNDS") {
        cfg.rounds = rounds.parse()?;
    }
    let data = cfg.data.load(cfg.seed)?;

    for (label, use_confidence, lambda) in [
        ("re-weighted, lambda 1.0 ", true, 1.0),
        ("re-weighted, lambda 0.25", true, 0.25),
        ("honest mean, lambda 1.0 ", false, 1.0),
    ] {
        let mut c = cfg.clone();
        c.reweight.use_confidence = use_confidence;
        c.confidence.lambda = lambda;
        let report = run_with_data(&c, &data)?;
        let (tpr, fpr) = report.mean_detection(10).unwrap_or((f64::NAN, f64::NAN));
        println!(
            "{label}: final accuracy {:.4}  TPR {tpr:.2}  FPR {fpr:.2}",
            report.final_accuracy().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
