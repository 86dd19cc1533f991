//! # fedsentinel
//!
//! A deterministic federated-learning attack/defense simulator built around
//! confidence-driven malicious client detection.
//!
//! Every round the server broadcasts the global model, clients train locally,
//! the malicious cohort poisons its data or its update, and every client
//! reports its parameters together with a confidence score measured on its
//! own training data. The confidence defense min-max normalizes the scores,
//! splits clients with a two-way 1-D k-means, drops the low-confidence group
//! and averages the rest with weights that combine data share and confidence.
//!
//! ## Modules
//!
//! - [`nn`]: dense ReLU MLP with softmax cross-entropy and SGD.
//! - [`data`]: IDX loading, synthetic data, Dirichlet partitioning, label shuffling.
//! - [`confidence`]: Lambert W, per-sample / per-client confidence, normalization.
//! - [`detection`]: two-way k-means and honest / malicious classification.
//! - [`aggregation`]: FedAvg, trimmed mean and confidence re-weighted aggregation.
//! - [`attacks`]: LIE, Min-Max and Min-Sum model poisoning.
//! - [`simulator`]: the round loop, metrics and run reports.
//!
//! Runnable walkthroughs of each piece live in the crate's `examples/` directory.

pub mod aggregation;
pub mod attacks;
pub mod confidence;
pub mod data;
pub mod detection;
pub mod error;
pub mod nn;
pub mod report;
pub mod simulator;

/// Index of a client within a simulation, `0..n_clients`.
pub type ClientId = usize;

pub use aggregation::{
    fedavg, reweighted_aggregate, trimmed_mean, AggregationWeights, ClientReport,
};
pub use attacks::{apply_attack, AttackConfig, AttackKind, Knowledge};
pub use confidence::{
    client_confidence, lambert_w0, normalize_scores, sample_confidence, ConfidenceConfig, ScoreSet,
};
pub use data::{
    load_idx, make_synthetic, partition_dirichlet, shuffle_labels, Dataset, PartitionConfig,
};
pub use detection::{classify, detection_metrics, kmeans2_1d, DetectionConfig, DetectionOutcome};
pub use error::{Error, Result};
pub use nn::{Mlp, ModelSpec, ParamVector, TrainConfig};
pub use report::{read_report, write_report};
pub use simulator::{
    run, run_with_data, select_malicious, DataSource, Defense, Profile, RoundMetrics, RunReport,
    SimulationConfig,
};
