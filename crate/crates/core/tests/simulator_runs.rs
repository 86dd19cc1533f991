use std::fs;
use std::process::Command;

use fedsentinel::report::{METRICS_FILE, SCORES_FILE, SIDECAR_FILE, WEIGHTS_FILE};
use fedsentinel::{
    read_report, run, select_malicious, write_report, AttackKind, DataSource, Defense,
    SimulationConfig,
};

fn small(seed: u64) -> SimulationConfig {
    let data = DataSource::Synthetic {
        n_samples: 600,
        n_features: 12,
        n_classes: 4,
    };
    let mut cfg = SimulationConfig::desk(data, seed).unwrap();
    cfg.set_clients(6);
    cfg.partition.min_samples_per_client = 20;
    cfg.rounds = 3;
    cfg.train.epochs = 2;
    cfg
}

#[test]
fn smoke_two_clients_one_round() {
    let mut cfg = small(1);
    cfg.set_clients(2);
    cfg.rounds = 1;
    let report = run(&cfg).unwrap();
    assert_eq!(report.rounds.len(), 1);
    let r = &report.rounds[0];
    assert!(r.accuracy.unwrap().is_finite());
    assert!(r
        .clients
        .iter()
        .all(|c| c.sigma_raw.is_finite() && c.sigma_norm.is_finite()));
}

#[test]
fn malicious_selection() {
    assert_eq!(select_malicious(50, 0.25, 3).len(), 13);
    assert!(select_malicious(10, 0.0, 3).is_empty());
    assert_eq!(select_malicious(10, 0.5, 8), select_malicious(10, 0.5, 8));
}

#[test]
fn every_attack_and_defense_runs_with_bounded_metrics() {
    for attack in [
        AttackKind::LabelShuffle,
        AttackKind::Lie,
        AttackKind::MinMax,
        AttackKind::MinSum,
    ] {
        for defense in [Defense::FedAvg, Defense::TrimMean, Defense::Confidence] {
            let mut cfg = small(4);
            cfg.attack.kind = attack;
            cfg.defense = defense;
            cfg.malicious_fraction = 0.5;
            let report = run(&cfg).unwrap();
            assert_eq!(report.malicious.len(), 3);
            for r in &report.rounds {
                for v in [r.accuracy, r.tpr, r.fpr].into_iter().flatten() {
                    assert!((0.0..=1.0).contains(&v), "{attack:?}/{defense:?}: {v}");
                }
                assert_eq!(r.tpr.is_some(), defense == Defense::Confidence);
            }
        }
    }
}

#[test]
fn same_seed_same_bytes() {
    let mut cfg = small(7);
    cfg.attack.kind = AttackKind::Lie;
    cfg.malicious_fraction = 0.5;
    cfg.dump_weights = true;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_report(&run(&cfg).unwrap(), a.path()).unwrap();
    write_report(&run(&cfg).unwrap(), b.path()).unwrap();
    for file in [METRICS_FILE, SCORES_FILE, WEIGHTS_FILE, SIDECAR_FILE] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut cfg = small(9);
    cfg.attack.kind = AttackKind::MinSum;
    cfg.malicious_fraction = 0.5;
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run(&cfg))
        .unwrap();
    let parallel = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| run(&cfg))
        .unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn no_attack_confidence_matches_fedavg() {
    let mut cfg = small(2);
    cfg.rounds = 4;
    let confidence = run(&cfg).unwrap();
    cfg.defense = Defense::FedAvg;
    let fedavg = run(&cfg).unwrap();
    let acc = |r: &fedsentinel::RunReport| r.rounds.iter().map(|m| m.accuracy).collect::<Vec<_>>();
    assert_eq!(acc(&confidence), acc(&fedavg));
    assert!(confidence.rounds.iter().all(|r| r.honest_count == 6));
}

#[test]
fn report_files_round_trip() {
    let mut cfg = small(5);
    cfg.attack.kind = AttackKind::LabelShuffle;
    cfg.malicious_fraction = 0.5;
    let report = run(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_report(&report, dir.path()).unwrap();

    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "round,accuracy,tpr,fpr,honest_count");
    assert_eq!(lines.len(), 4);
    for line in &lines[1..] {
        let acc: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    assert!(!dir.path().join(WEIGHTS_FILE).exists());

    let back = read_report(dir.path()).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back, report);
}

#[test]
fn eval_every_skips_rounds_but_not_the_last() {
    let mut cfg = small(6);
    cfg.rounds = 5;
    cfg.eval_every = 2;
    let report = run(&cfg).unwrap();
    let evaluated: Vec<usize> = report
        .rounds
        .iter()
        .filter(|r| r.accuracy.is_some())
        .map(|r| r.round)
        .collect();
    assert_eq!(evaluated, vec![2, 4, 5]);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = small(1);
    cfg.malicious_fraction = 1.5;
    assert!(run(&cfg).is_err());
    let mut cfg = small(1);
    cfg.rounds = 0;
    assert!(run(&cfg).is_err());
    let mut cfg = small(1);
    cfg.data = DataSource::Idx {
        dir: "/nonexistent/mnist".into(),
    };
    assert!(run(&cfg).is_err());
}

#[test]
fn cli_run_and_sweep() {
    let bin = env!("CARGO_BIN_EXE_fedsentinel");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let status = Command::new(bin)
        .args([
            "run",
            "--defense",
            "confidence",
            "--attack",
            "lie",
            "--fraction",
            "0.5",
        ])
        .args([
            "--clients",
            "4",
            "--rounds",
            "2",
            "--epochs",
            "1",
            "--seed",
            "3",
            "--dump-weights",
        ])
        .args(["--data", "synthetic:300,8,3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    for file in [METRICS_FILE, SCORES_FILE, WEIGHTS_FILE, SIDECAR_FILE] {
        assert!(out.join(file).exists(), "{file}");
    }

    let sweep = dir.path().join("sweep");
    let status = Command::new(bin)
        .args([
            "sweep",
            "--defenses",
            "fedavg,confidence",
            "--attacks",
            "ls,mm",
            "--fractions",
            "0.25",
        ])
        .args([
            "--clients",
            "4",
            "--rounds",
            "1",
            "--epochs",
            "1",
            "--data",
            "synthetic:300,8,3",
            "--out",
        ])
        .arg(&sweep)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    let summary = fs::read_to_string(sweep.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    assert!(sweep.join("0.25_mm_confidence.csv").exists());

    let bad = Command::new(bin)
        .args(["run", "--attack", "nope"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let missing = Command::new(bin)
        .args(["run", "--data", "idx:/nonexistent", "--out"])
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
}
