use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mocfl::harness::{compare_report, parse_config, read_metrics, run, DataSource, Overrides};
use mocfl::protocol::Algorithm;
use mocfl::Error;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMOKE: &str = r#"
source = "synthetic"
synth_rows_per_client = 30
synth_input_dim = 4
synth_classes = 3
hidden = [6]
feature_dim = 3
"#;

#[test]
fn source_only_config_gets_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", "source = \"synthetic\"\n");
    let cfg = parse_config(&path, &Overrides::default()).unwrap();
    assert_eq!(cfg.sim.local_lr, 0.01);
    assert_eq!(cfg.sim.global_lr, 0.01);
    assert_eq!(cfg.sim.batch_size, 64);
    assert_eq!(cfg.sim.local_epochs, 1);
    assert_eq!(cfg.sim.rounds, 100);
    assert_eq!(cfg.sim.car, 1.0);
    assert_eq!(cfg.algorithms, vec![Algorithm::Mocfl]);
    assert_eq!(cfg.seeds, vec![0]);
    assert!(matches!(cfg.source, DataSource::Synthetic(_)));
    assert_eq!(cfg, parse_config(&path, &Overrides::default()).unwrap());
}

#[test]
fn validation_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("source = \"synthetic\"\ncar = 1.5\n", "car"),
        ("source = \"synthetic\"\nparticipation = 0.0\n", "participation"),
        ("source = \"synthetic\"\nbatch_size = 0\n", "batch_size"),
        ("source = \"synthetic\"\ncsv_path = \"x.csv\"\n", "csv_path"),
        ("source = \"csv\"\nlabel_column = \"y\"\n", "csv_path"),
        ("source = \"csv\"\ncsv_path = \"x.csv\"\nsynth_spread = 2.0\nlabel_column = \"y\"\n", "synth_spread"),
        ("source = \"carrier pigeon\"\n", "source"),
        ("clients = 3\n", "source"),
        ("source = \"synthetic\"\nrepetitions = 0\n", "repetitions"),
        ("source = \"synthetic\"\nalgorithms = []\n", "algorithms"),
        ("source = \"synthetic\"\nkernel_gamma = -1.0\n", "kernel_gamma"),
        ("source = \"synthetic\"\nwarp_speed = 9\n", "warp_speed"),
        ("source = \"synthetic\"\nrounds = \"many\"\n", "rounds"),
    ];
    for (text, field) in cases {
        let path = write(dir.path(), "c.toml", text);
        let msg = parse_config(&path, &Overrides::default()).unwrap_err().to_string();
        assert!(msg.contains(field), "{text:?}: {msg}");
    }
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", "source = \"synthetic\"\n\nbogus = 1\n");
    match parse_config(&path, &Overrides::default()) {
        Err(Error::Parse { line, msg, .. }) => {
            assert_eq!(line, 3);
            assert!(msg.contains("bogus"));
        }
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn flags_override_file_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "c.toml",
        "source = \"synthetic\"\ncar = 0.9\nrounds = 7\nseeds = [4, 9]\nalgorithms = [\"mocfl\", \"fedavg\"]\n",
    );
    let o = Overrides {
        car: Some(0.5),
        rounds: Some(3),
        seed: Some(11),
        algorithm: Some(Algorithm::Fedavg),
        clients: Some(5),
        dump_reps: true,
        ..Overrides::default()
    };
    let cfg = parse_config(&path, &o).unwrap();
    assert_eq!(cfg.sim.car, 0.5);
    assert_eq!(cfg.sim.rounds, 3);
    assert_eq!(cfg.sim.clients, 5);
    assert_eq!(cfg.seeds, vec![11]);
    assert_eq!(cfg.algorithms, vec![Algorithm::Fedavg]);
    assert!(cfg.dump_reps && !cfg.dump_affinity);
}

#[test]
fn csv_path_is_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(
        dir.path(),
        "c.toml",
        "source = \"csv\"\ncsv_path = \"data/x.csv\"\nlabel_column = \"y\"\n",
    );
    let cfg = parse_config(&path, &Overrides::default()).unwrap();
    match cfg.source {
        DataSource::Csv(c) => assert_eq!(c.path, dir.path().join("data/x.csv")),
        other => panic!("{other:?}"),
    }
}

fn smoke_config(dir: &Path, extra: &str, out: &str) -> mocfl::harness::ExperimentConfig {
    let path = write(dir, "smoke.toml", &format!("{SMOKE}{extra}"));
    let o = Overrides { out_dir: Some(dir.join(out)), ..Overrides::default() };
    parse_config(&path, &o).unwrap()
}

#[test]
fn smoke_run_writes_one_row_per_repetition_and_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path(), "repetitions = 3\nclients = 2\nrounds = 1\n", "out");
    let out = run(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "seed,round,algorithm,car,avg_accuracy,best_accuracy_so_far,wall_seconds");
    assert_eq!(lines.len(), 1 + 3);
    assert_eq!(out.rows().count(), 3);
    let jsonl = fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 3);
    assert!(fs::read_to_string(dir.path().join("out/summary.txt")).unwrap().contains("total_wall_seconds="));
}

#[test]
fn summary_has_one_line_per_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = smoke_config(dir.path(), "algorithms = [\"mocfl\", \"fedavg\"]\nrounds = 3\nclients = 2\n", "out");
    let out = run(&cfg).unwrap();
    for alg in ["mocfl", "fedavg"] {
        let n = out.summary.lines().filter(|l| l.starts_with(&format!("{alg}: best_accuracy="))).count();
        assert_eq!(n, 1, "{}", out.summary);
    }
}

fn without_wall(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect()
}

#[test]
fn reruns_are_byte_identical_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "algorithms = [\"mocfl\", \"fedavg\"]\nrounds = 4\nclients = 4\ncar = 0.6\nseeds = [3, 1, 2]\n";
    let a = smoke_config(dir.path(), extra, "a");
    let b = smoke_config(dir.path(), extra, "b");
    run(&a).unwrap();
    run(&b).unwrap();
    let ta = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let tb = fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert_eq!(without_wall(&ta), without_wall(&tb));
    // Repetitions are merged in seed order.
    let seeds: Vec<u64> = read_metrics(dir.path().join("a/metrics.csv")).unwrap().iter().map(|r| r.seed).collect();
    assert!(seeds.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn dumps_are_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke_config(dir.path(), "rounds = 2\nclients = 3\n", "out");
    cfg.dump_affinity = true;
    cfg.dump_reps = true;
    run(&cfg).unwrap();
    let aff = fs::read_to_string(dir.path().join("out/affinity_mocfl_seed0.csv")).unwrap();
    assert_eq!(aff.lines().next().unwrap(), "round,client,m_0,m_1,m_2");
    assert_eq!(aff.lines().count(), 1 + 2 * 3);
    let reps = fs::read_to_string(dir.path().join("out/reps_mocfl_seed0.csv")).unwrap();
    assert_eq!(reps.lines().next().unwrap(), "round,client,class,weight,distance");
    assert!(reps.lines().count() > 1);
}

#[test]
fn csv_source_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("f1,f2,kind,label\n");
    for i in 0..120 {
        let y = i % 3;
        text.push_str(&format!("{},{},{},c{y}\n", y as f64 + (i % 7) as f64 * 0.1, i % 5, ["a", "b"][i % 2]));
    }
    write(dir.path(), "d.csv", &text);
    let path = write(
        dir.path(),
        "c.toml",
        "source = \"csv\"\ncsv_path = \"d.csv\"\nlabel_column = \"label\"\ncategorical = [\"kind\"]\nclients = 3\nrounds = 2\nalpha = 5.0\nalgorithms = [\"fedavg\", \"mocfl\"]\n",
    );
    let o = Overrides { out_dir: Some(dir.path().join("out")), ..Overrides::default() };
    let out = run(&parse_config(&path, &o).unwrap()).unwrap();
    assert_eq!(out.rows().count(), 4);
}

const HEADER: &str = "seed,round,algorithm,car,avg_accuracy,best_accuracy_so_far,wall_seconds\n";

#[test]
fn compare_single_file_single_algorithm() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = HEADER.to_string();
    for t in 0..=10 {
        let acc = 0.1 * t as f64;
        text.push_str(&format!("0,{t},fedavg,1.0,{acc},{acc},0.01\n"));
    }
    let f = write(dir.path(), "m.csv", &text);
    let rows = compare_report(&[f]).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.algorithm, "fedavg");
    // Accuracy 0.1 * round: the best value is the final one.
    assert!((r.best_accuracy - 1.0).abs() < 1e-12);
    let final10: f64 = (1..=10).map(|t| 0.1 * t as f64).sum::<f64>() / 10.0;
    assert!((r.mean_final10_accuracy - final10).abs() < 1e-12);
}

#[test]
fn compare_pools_repetitions_across_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(
        dir.path(),
        "a.csv",
        &format!("{HEADER}0,0,mocfl,0.5,0.2,0.2,0\n0,1,mocfl,0.5,0.6,0.6,0\n0,0,mocfl,1.0,0.5,0.5,0\n"),
    );
    let b = write(dir.path(), "b.csv", &format!("{HEADER}0,0,mocfl,0.5,0.4,0.4,0\n0,1,mocfl,0.5,0.3,0.4,0\n"));
    let rows = compare_report(&[a, b]).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].car, rows[0].repetitions), (1.0, 1));
    let r = &rows[1];
    assert_eq!((r.car, r.repetitions), (0.5, 2));
    assert!((r.best_accuracy - 0.6).abs() < 1e-12);
    assert!((r.mean_best_accuracy - 0.5).abs() < 1e-12);
    assert!((r.mean_final10_accuracy - (0.4 + 0.35) / 2.0).abs() < 1e-12);
}

#[test]
fn malformed_metrics_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (format!("{HEADER}0,0,mocfl,1.0,0.5,0.5,0\n0,1,mocfl,1.0,zero,0.5,0\n"), 3),
        (format!("{HEADER}0,0,mocfl,1.0,0.5,0.5,0\n0,2,mocfl,1.0,0.5,0.5,0\n"), 3),
        (format!("{HEADER}0,0,mocfl,1.0,0.5,0.5,0\n0,1,mocfl,1.0,0.4,0.4,0\n"), 3),
        (format!("{HEADER}0,0,mocfl,1.0,0.5\n"), 2),
        (format!("{HEADER}0,0,sgd,1.0,0.5,0.5,0\n"), 2),
        ("seed,round\n0,0\n".to_string(), 1),
    ];
    for (text, want) in cases {
        let f = write(dir.path(), "bad.csv", &text);
        match compare_report(&[f]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
            other => panic!("expected parse error for {text:?}, got {other:?}"),
        }
    }
}

#[test]
fn cli_exits_nonzero_with_field_in_message() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", &format!("{SMOKE}car = 1.5\nrounds = 1\n"));
    let bin = env!("CARGO_BIN_EXE_mocfl");
    let out = Command::new(bin).args(["run", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("car"));

    let bad = write(dir.path(), "m.csv", &format!("{HEADER}0,0,mocfl,1.0,0.5,0.5,0\n0,5,mocfl,1.0,0.5,0.5,0\n"));
    let out = Command::new(bin).arg("compare").arg(&bad).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));
}

#[test]
fn cli_run_and_compare_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "c.toml", &format!("{SMOKE}clients = 2\n"));
    let bin = env!("CARGO_BIN_EXE_mocfl");
    let out_dir = dir.path().join("o");
    let status = Command::new(bin)
        .args(["run", "--config"])
        .arg(&path)
        .args(["--rounds", "2", "--algorithm", "fedavg", "--car", "0.5", "--seed", "4", "--out"])
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(bin).arg("compare").arg(out_dir.join("metrics.csv")).output().unwrap();
    assert!(out.status.success());
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.lines().nth(1).unwrap().starts_with("fedavg"), "{table}");
}
