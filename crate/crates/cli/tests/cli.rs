use std::fs;
use std::path::Path;
use std::process::Command;

use ergodic::kv::KvMap;
use ergodic::targets::BenchmarkId;
use ergodic_cli::commands::{
    cmd_bench, cmd_demo_constraint, cmd_evaluate, cmd_train, load_params, PARAMS_FILE, REPORT_FILE,
};
use ergodic_cli::config::{EntropyFloor, InitStd};
use ergodic_cli::{load_config, ExperimentConfig};

fn small(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        chain_length: 3,
        iterations: 3,
        batch: 16,
        eval_samples: 4000,
        oracle_samples: 4000,
        mmd_samples: 500,
        hist_bins: 20,
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn pairs(v: &[(&str, &str)]) -> Vec<(String, String)> {
    v.iter()
        .map(|(k, x)| (k.to_string(), x.to_string()))
        .collect()
}

#[test]
fn config_round_trips_through_text() {
    let c = ExperimentConfig {
        target: BenchmarkId::BenchD,
        h: EntropyFloor::Value(2.5),
        p0_std: InitStd::PerDim(vec![1.5, 0.1 + 0.2]),
        learning_rate: 0.05,
        stop_gradient: true,
        bench_targets: vec![BenchmarkId::BenchA, BenchmarkId::CorrGauss],
        ..ExperimentConfig::default()
    };
    let back = ExperimentConfig::parse(&c.render()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.render(), c.render());
    let d = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::parse(&d.render()).unwrap(), d);
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.kv");
    fs::write(&file, "# demo\nT = 3\nbatch=64\nh=off\n").unwrap();
    let c = load_config(Some(&file), &pairs(&[("T", "7")])).unwrap();
    assert_eq!(c.chain_length, 7);
    assert_eq!(c.batch, 64);
    assert_eq!(c.h, EntropyFloor::Off);
    assert_eq!(c.iterations, ExperimentConfig::default().iterations);
}

#[test]
fn parse_errors_name_every_key() {
    let err = ExperimentConfig::parse("bogus=1\nT=x\ntarget=nowhere\nh=maybe\n")
        .unwrap_err()
        .to_string();
    for key in ["bogus", "T", "target", "h"] {
        assert!(
            err.contains(&format!("{key}:")),
            "{key} missing from `{err}`"
        );
    }
}

#[test]
fn validation_lists_every_offending_field() {
    let c = ExperimentConfig {
        leapfrog_steps: 0,
        batch: 1,
        mmd_samples: 0,
        learning_rate: -1.0,
        step_size_min: 0.3,
        step_size_max: 0.1,
        p0_std: InitStd::PerDim(vec![1.0]),
        ..ExperimentConfig::default()
    };
    let v = c.violations();
    for key in [
        "leapfrog_steps",
        "batch",
        "mmd_samples",
        "learning_rate",
        "step_size_min",
        "p0_std",
    ] {
        assert!(
            v.iter().any(|m| m.starts_with(key)),
            "{key} missing from {v:?}"
        );
    }
    assert!(ExperimentConfig::default().violations().is_empty());
}

#[test]
fn low_entropy_initial_distribution_needs_guard_off() {
    let mut c = ExperimentConfig {
        p0_std: InitStd::PerDim(vec![0.5, 0.5]),
        ..ExperimentConfig::default()
    };
    assert!(c.violations().iter().any(|m| m.starts_with("p0_std")));
    c.h = EntropyFloor::Off;
    assert!(c.violations().is_empty());
}

#[test]
fn zero_iterations_write_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        iterations: 0,
        ..small(dir.path())
    };
    let o = cmd_train(&c).unwrap();
    assert!(o.report.records.is_empty());
    let written = fs::read_to_string(dir.path().join(PARAMS_FILE)).unwrap();
    assert_eq!(written, o.initial.to_kv().render());
    assert_eq!(
        load_params(&dir.path().join(PARAMS_FILE)).unwrap(),
        c.chain_spec().unwrap()
    );
}

#[test]
fn corr_gauss_demo_config_never_triggers_guard() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        chain_length: 9,
        out: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let o = cmd_train(&c).unwrap();
    assert_eq!(o.report.records.len(), 50);
    assert_eq!(o.report.guard_events(), 0);
    let csv = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(6) == Some("0")));
}

#[test]
fn training_is_reproducible_from_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_train(&small(a.path())).unwrap();
    cmd_train(&small(b.path())).unwrap();
    let read = |d: &Path| fs::read(d.join(PARAMS_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

fn histogram_total(path: &Path) -> (u64, u64, u64) {
    let text = fs::read_to_string(path).unwrap();
    let header = text.lines().next().unwrap();
    let meta = KvMap::parse(&header.trim_start_matches('#').replace(' ', "\n")).unwrap();
    let cells: u64 = text
        .lines()
        .skip(2)
        .map(|l| l.split('\t').nth(2).unwrap().parse::<u64>().unwrap())
        .sum();
    (
        cells,
        meta.get("overflow").unwrap(),
        meta.get("total").unwrap(),
    )
}

#[test]
fn evaluate_writes_panels_and_trained_beats_untrained() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        chain_length: 5,
        iterations: 50,
        ..small(dir.path())
    };
    cmd_train(&c).unwrap();
    let s = cmd_evaluate(&c, None).unwrap();
    assert_eq!(s.trained_curve.len(), 6);
    assert_eq!(s.mmd_curve.len(), 5);
    let (_, trained, untrained) = *s.mmd_curve.last().unwrap();
    assert!(trained < untrained, "{trained} vs {untrained}");
    for name in ["hist_trained.tsv", "hist_untrained.tsv", "hist_oracle.tsv"] {
        let (cells, overflow, total) = histogram_total(&dir.path().join(name));
        assert_eq!(cells + overflow, total);
        assert_eq!(total, 4000);
    }
    let curve = fs::read_to_string(dir.path().join("convergence_trained.tsv")).unwrap();
    assert_eq!(curve.lines().count(), 7);
    // second run reads the cached oracle and reproduces every panel
    let again = cmd_evaluate(&c, None).unwrap();
    assert_eq!(again, s);
}

#[test]
fn evaluate_without_parameters_fails() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_evaluate(&small(dir.path()), None)
        .unwrap_err()
        .to_string();
    assert!(err.contains(PARAMS_FILE), "{err}");
}

#[test]
fn bench_rows_and_oracle_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        bench_targets: vec![BenchmarkId::CorrGauss, BenchmarkId::BenchB],
        oracle_samples: 100_000,
        ..small(dir.path())
    };
    let rows = cmd_bench(&c).unwrap();
    assert_eq!(rows.len(), 6);
    let oracle = rows
        .iter()
        .find(|r| r.target == BenchmarkId::CorrGauss && r.method == "oracle")
        .unwrap();
    assert!((oracle.neg_e_logpi - 1.0).abs() < 0.02, "{oracle:?}");
    assert!(rows.iter().all(|r| r.status == "ok"));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert!(
        csv.starts_with("target,method,neg_e_logpi,stderr,sample_seconds,train_seconds_per_100")
    );
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn bench_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        bench_targets: vec![BenchmarkId::BenchA, BenchmarkId::BenchB],
        learning_rate: 40.0,
        iterations: 5,
        ..small(dir.path())
    };
    let rows = cmd_bench(&c).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().any(|r| r.status.starts_with("error")));
    assert!(rows
        .iter()
        .filter(|r| r.method == "oracle")
        .all(|r| r.status == "ok"));
}

#[test]
fn stop_gradient_trains_faster_at_thirty_steps() {
    let dir = tempfile::tempdir().unwrap();
    let base = ExperimentConfig {
        chain_length: 30,
        iterations: 6,
        batch: 64,
        bench_targets: vec![BenchmarkId::CorrGauss],
        ..small(dir.path())
    };
    let seconds = |sg: bool| {
        let c = ExperimentConfig {
            stop_gradient: sg,
            ..base.clone()
        };
        cmd_bench(&c).unwrap()[0].train_seconds_per_100.unwrap()
    };
    let (full, sg) = (seconds(false), seconds(true));
    assert!(
        full >= 2.0 * sg,
        "full {full}s vs stop-gradient {sg}s per 100 iterations"
    );
}

#[test]
fn demo_constraint_contrasts_valid_and_invalid_start() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig {
        chain_length: 9,
        iterations: 10,
        ..small(dir.path())
    };
    let cases = cmd_demo_constraint(&c).unwrap();
    assert_eq!(cases.len(), 2);
    let (valid, invalid) = (&cases[0], &cases[1]);
    assert!(valid.entropy_p0 > valid.entropy_floor);
    assert!(invalid.entropy_p0 < valid.entropy_floor);
    assert_eq!(invalid.entropy_floor, f64::NEG_INFINITY);
    // a low-entropy start sits above E_pi[log pi*] = -1, a wide one below
    assert!(invalid.untrained_curve[0].estimate > -1.0);
    assert!(valid.untrained_curve[0].estimate < -1.0);
    for f in [
        "demo_summary.tsv",
        "demo_valid_curve.tsv",
        "demo_invalid_hist_trained.tsv",
        "demo_target_hist.tsv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn binary_applies_flags_and_reports_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("exp.kv");
    fs::write(&file, "T=2\niters=2\nbatch=8\n").unwrap();
    let out = dir.path().join("run");
    let run = Command::new(env!("CARGO_BIN_EXE_ergodic"))
        .args([
            "train",
            "--config",
            file.to_str().unwrap(),
            "--T",
            "4",
            "--threads",
            "1",
        ])
        .arg("--out")
        .arg(&out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(run.status.success());
    assert_eq!(
        load_params(&out.join(PARAMS_FILE)).unwrap().chain_length(),
        4
    );

    let bad = Command::new(env!("CARGO_BIN_EXE_ergodic"))
        .args(["train", "--batch", "1", "--leapfrog-steps", "0"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!bad.status.success());
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(
        err.contains("batch") && err.contains("leapfrog_steps"),
        "{err}"
    );
}
