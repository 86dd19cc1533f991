//! Desk-scale MNIST simulation: one attack, one defense, per-round metrics.
//!
//! ```bash
//! cargo run --release -p fedsentinel --example simulate -- [attack] [defense] [fraction] [seed]
//! cargo run --release -p fedsentinel --example simulate -- lie confidence 0.5 1
//! ```
//!
//! `attack` is one of none/ls/lie/mm/ms, `defense` one of fedavg/trimmean/confidence.

use std::path::PathBuf;
use std::time::Instant;

use fedsentinel::{run, AttackKind, DataSource, Defense, SimulationConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());

    let attack: AttackKind = arg(0, "lie").parse()?;
    let defense: Defense = arg(1, "confidence").parse()?;
    let fraction: f64 = arg(2, "0.5").parse()?;
    let seed: u64 = arg(3, "1").parse()?;

    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk");
    let mut cfg = SimulationConfig::desk(DataSource::Idx { dir }, seed)?;
    cfg.attack.kind = attack;
    cfg.defense = defense;
    cfg.malicious_fraction = fraction;
    if let Ok(rounds) = std::env::var("ROUNDS") {
        cfg.rounds = rounds.parse()?;
    }
    if let Ok(epochs) = std::env::var("EPOCHS") {
        cfg.train.epochs = epochs.parse()?;
    }

    let start = Instant::now();
    let report = run(&cfg)?;
    println!("malicious clients: {:?}", report.malicious);
    for r in &report.rounds {
        let sigmas: Vec<String> = r
            .clients
            .iter()
            .map(|c| format!("{:.3}{}", c.sigma_raw, if c.flagged { "*" } else { "" }))
            .collect();
        println!(
            "round {:>3}  acc {:.4}  tpr {:>5}  fpr {:>5}  honest {:>2}  sigma [{}]",
            r.round,
            r.accuracy.unwrap_or(f64::NAN),
            r.tpr.map_or("-".into(), |v| format!("{v:.2}")),
            r.fpr.map_or("-".into(), |v| format!("{v:.2}")),
            r.honest_count,
            sigmas.join(" ")
        );
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
