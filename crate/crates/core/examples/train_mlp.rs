//! Centralized training of the MLP, with a finite-difference gradient spot check.
//!
//! ```bash
//! cargo run --release -p fedsentinel --example train_mlp
//! ```

use fedsentinel::{make_synthetic, Mlp, ModelSpec, TrainConfig};

fn main() -> fedsentinel::Result<()> {
    let data = make_synthetic(2000, 20, 4, 1)?;
    let (train, test) = data.split(0.2, 2)?;
    let mlp = Mlp::new(ModelSpec::new(vec![20, 32, 4])?);
    let mut params = mlp.init_params(3);

    let probe = train.subset(&(0..8).collect::<Vec<_>>());
    let (loss, grad) = mlp.loss_and_gradient(&params, probe.features(), probe.labels())?;
    let h = 1e-5;
    for k in [0, 100, params.len() - 1] {
        let mut plus = params.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = params.clone();
        minus.as_mut_slice()[k] -= h;
        let lp = mlp
            .loss_and_gradient(&plus, probe.features(), probe.labels())?
            .0;
        let lm = mlp
            .loss_and_gradient(&minus, probe.features(), probe.labels())?
            .0;
        println!(
            "param {k:>3}: analytic {:+.6e} numeric {:+.6e}",
            grad[k],
            (lp - lm) / (2.0 * h)
        );
    }
    println!(
        "initial loss {loss:.4}, accuracy {:.3}",
        mlp.evaluate(&params, &test)?
    );

    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    for epoch in 1..=5 {
        params = mlp.train_local(
            &params,
            &train,
            &TrainConfig {
                seed: epoch,
                ..cfg.clone()
            },
        )?;
        let losses = mlp.per_sample_loss(&params, train.features(), train.labels())?;
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        println!(
            "epoch {epoch}: train loss {mean:.4}, test accuracy {:.3}",
            mlp.evaluate(&params, &test)?
        );
    }
    Ok(())
}
