//! Command-line front end: `fedsentinel run` for one experiment, `fedsentinel sweep`
//! for a grid of fractions x attacks x defenses.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsentinel::aggregation::LengthWeighting;
use fedsentinel::report::write_metrics_csv;
use fedsentinel::simulator::{LoadedData, Profile};
use fedsentinel::{
    run_with_data, write_report, AttackKind, DataSource, Defense, Knowledge, RunReport,
    SimulationConfig,
};

#[derive(Parser)]
#[command(
    name = "fedsentinel",
    version,
    about = "Federated attack/defense simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and write its CSV/JSON outputs.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "confidence")]
        defense: Defense,
        #[arg(long, default_value = "none")]
        attack: AttackKind,
        #[arg(long, default_value_t = 0.0)]
        fraction: f64,
        #[arg(long, default_value = "runs/run")]
        out: PathBuf,
    },
    /// Run every combination and write one metrics CSV per cell plus `summary.csv`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "fedavg,trimmean,confidence"
        )]
        defenses: Vec<Defense>,
        #[arg(long, value_delimiter = ',', default_value = "ls,lie,mm,ms")]
        attacks: Vec<AttackKind>,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,0.75")]
        fractions: Vec<f64>,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// `idx:<dir>` or `synthetic:<n>,<d>,<C>`.
    #[arg(long, default_value = "idx:./data/mnist-desk")]
    data: DataSource,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "full")]
    knowledge: Knowledge,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    z: Option<f64>,
    #[arg(long)]
    gamma_tol: Option<f64>,
    #[arg(long)]
    gap_threshold: Option<f64>,
    #[arg(long)]
    trim_beta: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Aggregate with `sum w_final theta / sum w_final` instead of the doubly length-weighted form.
    #[arg(long)]
    single_length_weighting: bool,
    /// Drop the confidence factor from the weights (honest mean by data share only).
    #[arg(long)]
    no_reweight: bool,
    #[arg(long)]
    dump_weights: bool,
}

impl Common {
    fn config(&self) -> fedsentinel::Result<SimulationConfig> {
        let mut cfg = SimulationConfig::profile(self.profile, self.data.clone(), self.seed)?;
        cfg.attack.knowledge = self.knowledge;
        if let Some(n) = self.clients {
            cfg.set_clients(n);
        }
        if let Some(v) = self.rounds {
            cfg.rounds = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.alpha {
            cfg.partition.alpha = v;
        }
        if let Some(v) = self.lambda {
            cfg.confidence.lambda = v;
        }
        if let Some(v) = self.z {
            cfg.attack.z = v;
        }
        if let Some(v) = self.gamma_tol {
            cfg.attack.gamma_tol = v;
        }
        if let Some(v) = self.gap_threshold {
            cfg.detection.gap_threshold = v;
        }
        if let Some(v) = self.trim_beta {
            cfg.trim_beta = v;
        }
        if let Some(v) = self.eval_every {
            cfg.eval_every = v;
        }
        if self.single_length_weighting {
            cfg.reweight.length_weighting = LengthWeighting::Single;
        }
        cfg.reweight.use_confidence = !self.no_reweight;
        cfg.dump_weights = self.dump_weights;
        Ok(cfg)
    }
}

fn print_summary(label: &str, report: &RunReport) {
    let acc = report.final_accuracy().unwrap_or(f64::NAN);
    match report.mean_detection(10) {
        Some((tpr, fpr)) => {
            println!("{label}: final accuracy {acc:.4}, TPR {tpr:.3}, FPR {fpr:.3}")
        }
        None => println!("{label}: final accuracy {acc:.4}"),
    }
}

fn run_one(
    cfg: &SimulationConfig,
    data: &LoadedData,
    out: &Path,
) -> fedsentinel::Result<RunReport> {
    let report = run_with_data(cfg, data)?;
    write_report(&report, out)?;
    Ok(report)
}

fn execute(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Run {
            common,
            defense,
            attack,
            fraction,
            out,
        } => {
            let mut cfg = common.config()?;
            cfg.defense = defense;
            cfg.attack.kind = attack;
            cfg.malicious_fraction = fraction;
            cfg.validate()?;
            let data = cfg.data.load(cfg.seed)?;
            let report = run_one(&cfg, &data, &out)?;
            print_summary(
                &format!("{} / {}", attack.short_name(), defense.short_name()),
                &report,
            );
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            common,
            defenses,
            attacks,
            fractions,
            out,
        } => {
            let base = common.config()?;
            let data = base.data.load(base.seed)?;
            fs::create_dir_all(&out)?;
            let summary_path = out.join("summary.csv");
            let mut summary = csv::Writer::from_path(&summary_path)?;
            summary.write_record([
                "fraction",
                "attack",
                "defense",
                "final_accuracy",
                "mean_tpr",
                "mean_fpr",
            ])?;
            for &fraction in &fractions {
                for &attack in &attacks {
                    for &defense in &defenses {
                        let mut cfg = base.clone();
                        cfg.malicious_fraction = fraction;
                        cfg.attack.kind = attack;
                        cfg.defense = defense;
                        cfg.validate()?;
                        let label = format!(
                            "{fraction}_{}_{}",
                            attack.short_name(),
                            defense.short_name()
                        );
                        let report = run_with_data(&cfg, &data)?;
                        write_metrics_csv(&report, &out.join(format!("{label}.csv")))?;
                        print_summary(&label, &report);
                        let detection = report.mean_detection(10);
                        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                        summary.write_record([
                            fraction.to_string(),
                            attack.short_name().to_string(),
                            defense.short_name().to_string(),
                            opt(report.final_accuracy()),
                            opt(detection.map(|d| d.0)),
                            opt(detection.map(|d| d.1)),
                        ])?;
                        summary.flush()?;
                    }
                }
            }
            std::io::stdout().flush()?;
            println!("wrote {}", summary_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
