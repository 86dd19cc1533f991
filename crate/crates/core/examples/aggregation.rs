//! FedAvg, trimmed mean and confidence re-weighted aggregation side by side.
//!
//! ```bash
//! cargo run -p fedsentinel --example aggregation
//! ```

use std::collections::BTreeMap;

use fedsentinel::aggregation::ReweightOptions;
use fedsentinel::detection::detect;
use fedsentinel::{
    fedavg, normalize_scores, reweighted_aggregate, trimmed_mean, ClientReport, DetectionConfig,
    ParamVector,
};

fn main() -> fedsentinel::Result<()> {
    let clients = [
        (vec![1.0, 1.0], 2.70, 300),
        (vec![1.2, 0.8], 2.65, 100),
        (vec![0.9, 1.1], 2.60, 200),
        (vec![9.0, -9.0], 0.80, 200),
    ];
    let reports: Vec<ClientReport> = clients
        .iter()
        .enumerate()
        .map(|(id, (params, sigma, len))| ClientReport {
            client_id: id,
            params: ParamVector::new(params.clone()),
            sigma_raw: *sigma,
            data_length: *len,
        })
        .collect();

    println!("fedavg       {:?}", fedavg(&reports)?.as_slice());
    println!(
        "trimmed 0.25 {:?}",
        trimmed_mean(&reports, 0.25)?.as_slice()
    );

    let raw: BTreeMap<usize, f64> = reports.iter().map(|r| (r.client_id, r.sigma_raw)).collect();
    let scores = normalize_scores(raw)?;
    let outcome = detect(&scores, &DetectionConfig::default())?;
    let (theta, weights) =
        reweighted_aggregate(&reports, &outcome, &scores, ReweightOptions::default())?;
    println!(
        "confidence   {:?}  (dropped {:?})",
        theta.as_slice(),
        outcome.malicious
    );
    for (id, w) in &weights.w_final {
        println!(
            "  client {id}: w_orig {:.3} r_norm {:.3} w_final {:.3}",
            weights.w_orig[id], weights.r_norm[id], w
        );
    }
    Ok(())
}
