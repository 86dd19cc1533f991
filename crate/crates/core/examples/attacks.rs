//! The three model-poisoning attacks on a handful of random benign updates.
//!
//! ```bash
//! cargo run -p fedsentinel --example attacks
//! ```

use std::collections::{BTreeMap, BTreeSet};

use fedsentinel::attacks::{coordinate_mean, max_pairwise_distance, squared_distance};
use fedsentinel::{apply_attack, AttackConfig, AttackKind, Knowledge, ParamVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> fedsentinel::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dim = 6;
    let updates: BTreeMap<usize, ParamVector> = (0..8)
        .map(|id| {
            (
                id,
                ParamVector::new(
                    (0..dim)
                        .map(|_| 1.0 + rng.random_range(-0.5..0.5))
                        .collect(),
                ),
            )
        })
        .collect();
    let malicious: BTreeSet<usize> = [5, 6, 7].into();
    let honest: Vec<ParamVector> = updates
        .iter()
        .filter(|(id, _)| !malicious.contains(id))
        .map(|(_, u)| u.clone())
        .collect();
    let mu = coordinate_mean(&honest);
    let max_dist = max_pairwise_distance(&honest);

    for kind in [AttackKind::Lie, AttackKind::MinMax, AttackKind::MinSum] {
        for knowledge in [Knowledge::Full, Knowledge::Partial] {
            let cfg = AttackConfig {
                kind,
                knowledge,
                ..AttackConfig::default()
            };
            let poisoned = apply_attack(&updates, &malicious, &cfg)?;
            let m = &poisoned[&5];
            let worst = honest
                .iter()
                .map(|h| squared_distance(m, h))
                .fold(0.0, f64::max);
            println!(
                "{:>3} {:?}: |m - mu| = {:.4}, max dist to honest {:.4} (honest max {:.4})",
                kind.short_name(),
                knowledge,
                squared_distance(m, &mu).sqrt(),
                worst.sqrt(),
                max_dist
            );
        }
    }
    Ok(())
}
