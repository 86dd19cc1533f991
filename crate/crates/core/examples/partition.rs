//! Dirichlet non-IID partitioning and label shuffling on the bundled MNIST subset.
//!
//! ```bash
//! cargo run --release -p fedsentinel --example partition
//! ```

use std::path::PathBuf;

use fedsentinel::data::heterogeneity;
use fedsentinel::{partition_dirichlet, shuffle_labels, DataSource, PartitionConfig};

fn main() -> fedsentinel::Result<()> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-desk");
    let train = DataSource::Idx { dir }.load(0)?.train;
    println!(
        "{} training samples, class counts {:?}",
        train.len(),
        train.class_histogram()
    );

    for alpha in [0.1, 0.5, 1.0, 100.0] {
        let cfg = PartitionConfig {
            n_clients: 10,
            alpha,
            seed: 3,
            min_samples_per_client: 32,
        };
        let parts = partition_dirichlet(&train, &cfg)?;
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        println!(
            "alpha {alpha:>5}: heterogeneity {:.3}, sizes {sizes:?}",
            heterogeneity(&train, &parts)
        );
    }

    let cfg = PartitionConfig::default();
    let parts = partition_dirichlet(&train, &cfg)?;
    let client = train.subset(&parts[0]);
    println!("\nclient 0 class counts {:?}", client.class_histogram());
    let shuffled = shuffle_labels(&client, 11);
    let kept = client
        .labels()
        .iter()
        .zip(shuffled.labels())
        .filter(|(a, b)| a == b)
        .count();
    println!(
        "after label shuffle: same histogram {:?}, {kept}/{} labels unchanged",
        shuffled.class_histogram() == client.class_histogram(),
        client.len()
    );
    Ok(())
}
