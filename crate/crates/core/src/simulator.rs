//! The federated round loop.
//!
//! One round:
//! 1. broadcast the global parameters;
//! 2. every client trains locally (label-shuffle attackers on their shuffled data);
//! 3. model-poisoning attackers replace their update, then every client scores
//!    its submitted parameters on its own training data;
//! 4. the confidence defense normalizes, clusters and classifies the scores;
//! 5. the chosen defense aggregates and the global model is evaluated.
//!
//! The malicious set is only used to dispatch attacks and to score detection;
//! the server side sees nothing but [`ClientReport`]s.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    fedavg, reweighted_aggregate, trimmed_mean, AggregationWeights, ClientReport, ReweightOptions,
};
use crate::attacks::{apply_attack, AttackConfig, AttackKind, Knowledge};
use crate::confidence::{client_confidence, normalize_scores, ConfidenceConfig};
use crate::data::{
    load_idx, make_synthetic, partition_dirichlet, shuffle_labels, Dataset, PartitionConfig,
};
use crate::detection::{detect, detection_metrics, DetectionConfig, DetectionOutcome};
use crate::error::{Error, Result};
use crate::nn::{Mlp, ModelSpec, ParamVector, TrainConfig};
use crate::ClientId;

/// Aggregation rule used by the server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defense {
    FedAvg,
    TrimMean,
    Confidence,
}

impl Defense {
    pub fn short_name(self) -> &'static str {
        match self {
            Defense::FedAvg => "fedavg",
            Defense::TrimMean => "trimmean",
            Defense::Confidence => "confidence",
        }
    }
}

impl FromStr for Defense {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedavg" => Ok(Defense::FedAvg),
            "trimmean" | "trim_mean" => Ok(Defense::TrimMean),
            "confidence" => Ok(Defense::Confidence),
            other => Err(Error::Config(format!(
                "unknown defense {other:?} (expected fedavg, trimmean or confidence)"
            ))),
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Where training and test data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// A directory holding `train-*` and `t10k-*` IDX pairs (optionally gzipped).
    Idx { dir: PathBuf },
    /// Gaussian clusters; 20% are held out for testing.
    Synthetic {
        n_samples: usize,
        n_features: usize,
        n_classes: usize,
    },
}

impl FromStr for DataSource {
    type Err = Error;

    /// Parses `idx:<dir>` or `synthetic:<n>,<d>,<C>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(dir) = s.strip_prefix("idx:") {
            return Ok(DataSource::Idx { dir: dir.into() });
        }
        if let Some(spec) = s.strip_prefix("synthetic:") {
            let parts: Vec<usize> = spec
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad synthetic spec {spec:?}: {e}")))?;
            if let [n_samples, n_features, n_classes] = parts[..] {
                return Ok(DataSource::Synthetic {
                    n_samples,
                    n_features,
                    n_classes,
                });
            }
            return Err(Error::Config(format!(
                "synthetic data needs <n>,<d>,<C>, got {spec:?}"
            )));
        }
        Err(Error::Config(format!(
            "data source must be idx:<dir> or synthetic:<n>,<d>,<C>, got {s:?}"
        )))
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Idx { dir } => write!(f, "idx:{}", dir.display()),
            DataSource::Synthetic {
                n_samples,
                n_features,
                n_classes,
            } => write!(f, "synthetic:{n_samples},{n_features},{n_classes}"),
        }
    }
}

/// Training and held-out test data for one experiment.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
}

fn find_idx(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<LoadedData> {
        match self {
            DataSource::Idx { dir } => {
                let train = load_idx(
                    find_idx(dir, "train-images-idx3-ubyte"),
                    find_idx(dir, "train-labels-idx1-ubyte"),
                )?;
                let test = load_idx(
                    find_idx(dir, "t10k-images-idx3-ubyte"),
                    find_idx(dir, "t10k-labels-idx1-ubyte"),
                )?;
                let n_classes = train.n_classes().max(test.n_classes());
                let widen = |d: Dataset| {
                    Dataset::new(d.features().to_owned(), d.labels().to_vec(), n_classes)
                };
                Ok(LoadedData {
                    train: widen(train)?,
                    test: widen(test)?,
                })
            }
            DataSource::Synthetic {
                n_samples,
                n_features,
                n_classes,
            } => {
                let all = make_synthetic(
                    *n_samples,
                    *n_features,
                    *n_classes,
                    derive_seed(seed, &[tags::DATA]),
                )?;
                let (train, test) = all.split(0.2, derive_seed(seed, &[tags::SPLIT]))?;
                Ok(LoadedData { train, test })
            }
        }
    }
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_clients: usize,
    pub malicious_fraction: f64,
    pub rounds: usize,
    pub attack: AttackConfig,
    pub defense: Defense,
    /// Per-side trim fraction of the TrimMean defense.
    pub trim_beta: f64,
    pub detection: DetectionConfig,
    pub reweight: ReweightOptions,
    pub partition: PartitionConfig,
    pub train: TrainConfig,
    pub model: ModelSpec,
    pub confidence: ConfidenceConfig,
    /// Evaluate the global model every this many rounds (and after the last one).
    pub eval_every: usize,
    pub seed: u64,
    pub data: DataSource,
    /// Record per-client aggregation weights in the report.
    pub dump_weights: bool,
}

/// Which preset to start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 10 clients, 30 rounds, 20 local epochs.
    Desk,
    /// 50 clients, 200 rounds, 20 local epochs.
    Paper,
}

pub const DESK_HIDDEN_MNIST: usize = 512;
pub const DESK_HIDDEN_SYNTHETIC: usize = 32;

impl SimulationConfig {
    /// Preset for `data`, with all sub-seeds derived from `seed`.
    ///
    /// MNIST-shaped data (784 features, 10 classes) uses a 784-512-10 MLP,
    /// anything else a `d-32-C` one.
    pub fn profile(profile: Profile, data: DataSource, seed: u64) -> Result<Self> {
        let (n_features, n_classes) = match &data {
            DataSource::Synthetic {
                n_features,
                n_classes,
                ..
            } => (*n_features, *n_classes),
            DataSource::Idx { .. } => (784, 10),
        };
        let hidden = if n_features == 784 && n_classes == 10 {
            DESK_HIDDEN_MNIST
        } else {
            DESK_HIDDEN_SYNTHETIC
        };
        let (n_clients, rounds, epochs) = match profile {
            Profile::Desk => (10, 30, 20),
            Profile::Paper => (50, 200, 20),
        };
        let mut cfg = Self {
            n_clients,
            malicious_fraction: 0.0,
            rounds,
            attack: AttackConfig::default(),
            defense: Defense::Confidence,
            trim_beta: 0.25,
            detection: DetectionConfig::default(),
            reweight: ReweightOptions::default(),
            partition: PartitionConfig {
                n_clients,
                alpha: 0.5,
                seed: 0,
                min_samples_per_client: 32,
            },
            train: TrainConfig {
                epochs,
                batch_size: 16,
                learning_rate: 0.01,
                weight_decay: 1e-3,
                seed: 0,
            },
            model: ModelSpec::new(vec![n_features, hidden, n_classes])?,
            confidence: ConfidenceConfig::new(1.0, n_classes)?,
            eval_every: 1,
            seed,
            data,
            dump_weights: false,
        };
        cfg.set_seed(seed);
        Ok(cfg)
    }

    pub fn desk(data: DataSource, seed: u64) -> Result<Self> {
        Self::profile(Profile::Desk, data, seed)
    }

    /// Sets the master seed and the partition / training seeds derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.partition.seed = derive_seed(seed, &[tags::PARTITION]);
        self.train.seed = derive_seed(seed, &[tags::TRAIN]);
    }

    pub fn set_clients(&mut self, n_clients: usize) {
        self.n_clients = n_clients;
        self.partition.n_clients = n_clients;
    }

    pub fn n_malicious(&self) -> usize {
        (self.n_clients as f64 * self.malicious_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.malicious_fraction) {
            return Err(Error::Config(format!(
                "malicious fraction must lie in [0, 1], got {}",
                self.malicious_fraction
            )));
        }
        if self.partition.n_clients != self.n_clients {
            return Err(Error::Config(format!(
                "partition is set up for {} clients, simulation for {}",
                self.partition.n_clients, self.n_clients
            )));
        }
        if self.confidence.n_classes != self.model.n_classes() {
            return Err(Error::Config(format!(
                "confidence uses {} classes, model outputs {}",
                self.confidence.n_classes,
                self.model.n_classes()
            )));
        }
        if !(self.detection.gap_threshold.is_finite() && self.detection.gap_threshold >= 0.0) {
            return Err(Error::Config(
                "gap threshold must be finite and >= 0".into(),
            ));
        }
        if self.defense == Defense::TrimMean {
            let trim = (self.trim_beta * self.n_clients as f64).floor() as usize;
            if !(self.trim_beta >= 0.0) || 2 * trim >= self.n_clients {
                return Err(Error::Config(format!(
                    "trim fraction {} leaves no clients out of {}",
                    self.trim_beta, self.n_clients
                )));
            }
        }
        self.attack.validate()?;
        self.train.validate()?;
        self.confidence.validate()
    }
}

/// One client's confidence trace for a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientTrace {
    pub client_id: ClientId,
    pub sigma_raw: f64,
    pub sigma_norm: f64,
    pub flagged: bool,
}

/// Per-round outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: usize,
    /// Test accuracy of the aggregated model; `None` on rounds that were not evaluated.
    pub accuracy: Option<f64>,
    /// Detection rates; `None` for defenses without detection.
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    /// Clients whose updates entered aggregation.
    pub honest_count: usize,
    pub mu_lower: Option<f64>,
    pub mu_upper: Option<f64>,
    pub clients: Vec<ClientTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<AggregationWeights>,
}

/// A completed run: its resolved configuration, ground truth and per-round metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SimulationConfig,
    pub malicious: BTreeSet<ClientId>,
    pub rounds: Vec<RoundMetrics>,
}

impl RunReport {
    /// Accuracy of the last evaluated round.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.rounds.iter().rev().find_map(|r| r.accuracy)
    }

    /// Mean TPR and FPR over the last `window` rounds that report them.
    pub fn mean_detection(&self, window: usize) -> Option<(f64, f64)> {
        let tail: Vec<(f64, f64)> = self
            .rounds
            .iter()
            .rev()
            .filter_map(|r| Some((r.tpr?, r.fpr?)))
            .take(window)
            .collect();
        if tail.is_empty() {
            return None;
        }
        let n = tail.len() as f64;
        let (tpr, fpr) = tail
            .iter()
            .fold((0.0, 0.0), |(a, b), (t, f)| (a + t, b + f));
        Some((tpr / n, fpr / n))
    }
}

/// `round(n * fraction)` distinct client ids drawn uniformly, sorted.
pub fn select_malicious(n: usize, fraction: f64, seed: u64) -> BTreeSet<ClientId> {
    let k = ((n as f64 * fraction.clamp(0.0, 1.0)).round() as usize).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[tags::MALICIOUS]));
    sample(&mut rng, n, k).into_iter().collect()
}

mod tags {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const TRAIN: u64 = 4;
    pub const INIT: u64 = 5;
    pub const MALICIOUS: u64 = 6;
    pub const SHUFFLE: u64 = 7;
}

/// Mixes `seed` with a path of integers into an independent stream seed (splitmix64).
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// What the server decided in one round.
struct ServerDecision {
    global: ParamVector,
    outcome: Option<DetectionOutcome>,
    sigma_norm: BTreeMap<ClientId, f64>,
    weights: Option<AggregationWeights>,
    honest_count: usize,
}

/// Server-side aggregation; deliberately blind to the ground truth.
struct Server<'a> {
    cfg: &'a SimulationConfig,
}

impl Server<'_> {
    fn aggregate(
        &self,
        reports: &[ClientReport],
        previous: &ParamVector,
    ) -> Result<ServerDecision> {
        let raw: BTreeMap<ClientId, f64> =
            reports.iter().map(|r| (r.client_id, r.sigma_raw)).collect();
        let scores = normalize_scores(raw)?;
        let sigma_norm = scores.normalized().clone();
        let n = reports.len();
        match self.cfg.defense {
            Defense::FedAvg => Ok(ServerDecision {
                global: fedavg(reports)?,
                outcome: None,
                sigma_norm,
                weights: None,
                honest_count: n,
            }),
            Defense::TrimMean => Ok(ServerDecision {
                global: trimmed_mean(reports, self.cfg.trim_beta)?,
                outcome: None,
                sigma_norm,
                weights: None,
                honest_count: n,
            }),
            Defense::Confidence => {
                let outcome = detect(&scores, &self.cfg.detection)?;
                if outcome.malicious.is_empty() {
                    // No evidence of an attack: plain FedAvg over everyone.
                    return Ok(ServerDecision {
                        global: fedavg(reports)?,
                        honest_count: n,
                        outcome: Some(outcome),
                        sigma_norm,
                        weights: None,
                    });
                }
                match reweighted_aggregate(reports, &outcome, &scores, self.cfg.reweight) {
                    Ok((global, weights)) => Ok(ServerDecision {
                        global,
                        honest_count: outcome.honest.len(),
                        outcome: Some(outcome),
                        sigma_norm,
                        weights: Some(weights),
                    }),
                    Err(Error::NoHonestClients) => {
                        log::warn!("every client was flagged; keeping the previous global model");
                        Ok(ServerDecision {
                            global: previous.clone(),
                            honest_count: 0,
                            outcome: Some(outcome),
                            sigma_norm,
                            weights: None,
                        })
                    }
                    Err(e) => Err(e),
                }
            }
        }
    }
}

/// Runs a full simulation, loading data from `config.data`.
pub fn run(config: &SimulationConfig) -> Result<RunReport> {
    config.validate()?;
    let data = config.data.load(config.seed)?;
    run_with_data(config, &data)
}

/// Runs a full simulation on already loaded data.
pub fn run_with_data(config: &SimulationConfig, data: &LoadedData) -> Result<RunReport> {
    config.validate()?;
    let LoadedData { train, test } = data;
    if train.n_features() != config.model.input_dim() {
        return Err(Error::Config(format!(
            "model expects {} features, data has {}",
            config.model.input_dim(),
            train.n_features()
        )));
    }
    if train.n_classes() > config.model.n_classes() || test.n_classes() > config.model.n_classes() {
        return Err(Error::Config(format!(
            "data has {} classes, model outputs {}",
            train.n_classes().max(test.n_classes()),
            config.model.n_classes()
        )));
    }

    let mlp = Mlp::new(config.model.clone());
    let malicious = select_malicious(config.n_clients, config.malicious_fraction, config.seed);
    let parts = partition_dirichlet(train, &config.partition)?;
    let client_data: Vec<Dataset> = parts
        .iter()
        .enumerate()
        .map(|(id, idx)| {
            let local = train.subset(idx);
            if config.attack.kind == AttackKind::LabelShuffle && malicious.contains(&id) {
                shuffle_labels(
                    &local,
                    derive_seed(config.seed, &[tags::SHUFFLE, id as u64]),
                )
            } else {
                local
            }
        })
        .collect();

    // Under full knowledge the attackers' own benign updates never feed the attack.
    let skip_benign_training = config.attack.kind.is_model_poisoning()
        && config.attack.knowledge == Knowledge::Full
        && malicious.len() < config.n_clients;
    let server = Server { cfg: config };
    let mut global = mlp.init_params(derive_seed(config.seed, &[tags::INIT]));
    let mut rounds = Vec::with_capacity(config.rounds);

    for round in 1..=config.rounds {
        let trained: Vec<ParamVector> = client_data
            .par_iter()
            .enumerate()
            .map(|(id, local)| {
                if skip_benign_training && malicious.contains(&id) {
                    // Overwritten by the attack before anyone observes it.
                    return Ok(global.clone());
                }
                let cfg = TrainConfig {
                    seed: derive_seed(config.train.seed, &[round as u64, id as u64]),
                    ..config.train.clone()
                };
                mlp.train_local(&global, local, &cfg)
            })
            .collect::<Result<_>>()?;
        let updates: BTreeMap<ClientId, ParamVector> = trained.into_iter().enumerate().collect();
        let submitted = apply_attack(&updates, &malicious, &config.attack)?;

        let reports: Vec<ClientReport> = submitted
            .into_par_iter()
            .map(|(id, params)| {
                let local = &client_data[id];
                let losses = mlp.per_sample_loss(&params, local.features(), local.labels())?;
                Ok(ClientReport {
                    client_id: id,
                    sigma_raw: client_confidence(&losses, &config.confidence)?,
                    data_length: local.len(),
                    params,
                })
            })
            .collect::<Result<_>>()?;

        let decision = server.aggregate(&reports, &global)?;
        global = decision.global;

        let (tpr, fpr) = match &decision.outcome {
            Some(outcome) => {
                let (t, f) = detection_metrics(outcome, &malicious);
                (Some(t), Some(f))
            }
            None => (None, None),
        };
        let accuracy = if round % config.eval_every == 0 || round == config.rounds {
            Some(mlp.evaluate(&global, test)?)
        } else {
            None
        };
        let clients = reports
            .iter()
            .map(|r| ClientTrace {
                client_id: r.client_id,
                sigma_raw: r.sigma_raw,
                sigma_norm: decision.sigma_norm[&r.client_id],
                flagged: decision
                    .outcome
                    .as_ref()
                    .is_some_and(|o| o.is_flagged(r.client_id)),
            })
            .collect();
        log::info!(
            "round {round}: accuracy {:?}, honest {}, tpr {:?}, fpr {:?}",
            accuracy,
            decision.honest_count,
            tpr,
            fpr
        );
        rounds.push(RoundMetrics {
            round,
            accuracy,
            tpr,
            fpr,
            honest_count: decision.honest_count,
            mu_lower: decision.outcome.as_ref().map(|o| o.mu_lower),
            mu_upper: decision.outcome.as_ref().map(|o| o.mu_upper),
            clients,
            weights: if config.dump_weights {
                decision.weights
            } else {
                None
            },
        });
    }

    Ok(RunReport {
        config: config.clone(),
        malicious,
        rounds,
    })
}
