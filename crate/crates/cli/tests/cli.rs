use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use neurodecode::harness::{make_synthetic_offline_dataset, SyntheticConfig};

const TINY_OFFLINE: &[&str] = &[
    "--set",
    "offline.arch.n_h1=12",
    "--set",
    "offline.arch.n_h2=6",
    "--set",
    "offline.training.epochs=1",
];

const TINY_CLOSED_LOOP: &[&str] = &[
    "--set",
    "closed_loop.arch.n_h1=12",
    "--set",
    "closed_loop.arch.n_h2=6",
    "--set",
    "closed_loop.pretrain_steps=500",
    "--set",
    "closed_loop.warmup_reaches=2",
    "--set",
    "closed_loop.phase1_trials=4",
    "--set",
    "closed_loop.phase2_trials=3",
    "--set",
    "closed_loop.scratch_trials=3",
    "--set",
    "closed_loop.eval_trials=2",
    "--set",
    "closed_loop.bptt.epochs=1",
    "--set",
    "closed_loop.bptt_nopretrain.epochs=1",
];

fn run(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_neurodecode"));
    cmd.args(args).env_remove("NEURODECODE_OUT");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn help_documents_every_subcommand() {
    let o = run(&["--help"], None);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    for sub in ["train-offline", "closed-loop", "memory", "ablate"] {
        assert!(text.contains(sub), "{sub} missing from help");
        assert_eq!(code(&run(&[sub, "--help"], None)), 0);
    }
    let text = stdout(&run(&["closed-loop", "--help"], None));
    for flag in [
        "--protocol",
        "--disruption",
        "--intensity",
        "--seeds",
        "--set",
        "--config",
        "--out",
    ] {
        assert!(text.contains(flag), "{flag} missing");
    }
}

#[test]
fn memory_reports_table_values() {
    let o = run(
        &["memory", "--arch", "96-256-128-2", "--timesteps", "120"],
        None,
    );
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("online total        1.409 MB"));
    assert!(text.contains("bptt static         1.879 MB"));
    let text = stdout(&run(&["memory", "--arch", "96-1024-512-2"], None));
    assert!(text.contains("19.137 MB") && text.contains("25.516 MB"));
}

#[test]
fn memory_measure_runs() {
    let o = run(
        &[
            "memory",
            "--arch",
            "8-6-4-2",
            "--timesteps",
            "20",
            "--measure",
        ],
        None,
    );
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("measured bptt aux"));
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(code(&run(&["memory", "--timesteps", "0"], None)), 2);
    assert_eq!(code(&run(&["memory", "--arch", "96-256-x-2"], None)), 2);
    assert_eq!(code(&run(&["train-offline", "--seeds", "1"], None)), 2);
    assert_eq!(
        code(&run(
            &["train-offline", "--synthetic", "100", "--mode", "sideways"],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(
            &["train-offline", "--synthetic", "100", "--seeds", ""],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(
            &[
                "train-offline",
                "--synthetic",
                "100",
                "--set",
                "offline.nope=1"
            ],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(
            &[
                "closed-loop",
                "--protocol",
                "disruption",
                "--intensity",
                "1.5"
            ],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(
            &[
                "closed-loop",
                "--protocol",
                "disruption",
                "--disruption",
                "melt"
            ],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(&["closed-loop", "--protocol", "sideways"], None)),
        2
    );
    assert_eq!(
        code(&run(
            &["ablate", "--synthetic", "100", "--variants", ""],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(
            &["ablate", "--synthetic", "100", "--variants", "delta,bogus"],
            None
        )),
        2
    );
    assert_eq!(
        code(&run(
            &["train-offline", "--dataset", "/nonexistent/x.csv"],
            None
        )),
        2
    );
}

#[test]
fn train_offline_writes_one_row_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "train-offline",
        "--synthetic",
        "400",
        "--mode",
        "batched",
        "--seeds",
        "1,2,3",
    ];
    args.extend_from_slice(TINY_OFFLINE);
    let o = run(&args, Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&dir.path().join("offline_results.csv")), 3);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("offline_summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["seeds"], serde_json::json!([1, 2, 3]));
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn timestepwise_mode_and_dataset_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("data.csv");
    make_synthetic_offline_dataset(300, &SyntheticConfig::default(), 4)
        .unwrap()
        .save(&csv)
        .unwrap();
    let out = dir.path().join("out");
    let mut args = vec![
        "train-offline",
        "--dataset",
        csv.to_str().unwrap(),
        "--mode",
        "timestepwise",
    ];
    args.extend_from_slice(TINY_OFFLINE);
    let o = run(&args, Some(&out));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(out.join("offline_results.csv")).unwrap();
    assert!(rows.lines().nth(1).unwrap().starts_with("1,timestepwise,"));
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["train-offline", "--synthetic", "300"];
    args.extend_from_slice(TINY_OFFLINE);
    let o = Command::new(env!("CARGO_BIN_EXE_neurodecode"))
        .args(&args)
        .env("NEURODECODE_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("offline_curve.csv").exists());
}

#[test]
fn config_file_is_layered_under_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"offline": {"arch": {"n_h1": 12, "n_h2": 6}, "training": {"epochs": 3}}}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let args = [
        "train-offline",
        "--synthetic",
        "300",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "offline.training.epochs=1",
    ];
    assert_eq!(code(&run(&args, Some(&out))), 0);
    let curve = fs::read_to_string(out.join("offline_curve.csv")).unwrap();
    assert!(curve
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1).unwrap() <= "1"));
}

#[test]
fn closed_loop_disruption_rows_and_phases() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "closed-loop",
        "--protocol",
        "disruption",
        "--disruption",
        "dropout",
        "--seeds",
        "1..2",
    ];
    args.extend_from_slice(TINY_CLOSED_LOOP);
    let o = run(&args, Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    // 2 seeds × 3 decoders × (4 + 3) trials
    assert_eq!(text.lines().count() - 1, 42);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let trial: usize = f[5].parse().unwrap();
        assert_eq!(f[4], if trial < 4 { "1" } else { "2" });
        assert_eq!(f[2], "dropout");
    }
}

#[test]
fn closed_loop_nopretrain_subset() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "closed-loop",
        "--protocol",
        "nopretrain",
        "--decoders",
        "online_snn,kalman",
    ];
    args.extend_from_slice(TINY_CLOSED_LOOP);
    let o = run(&args, Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(data_rows(&dir.path().join("trials.csv")), 2 * (3 + 2));
}

#[test]
fn ablate_rows_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "ablate",
        "--variants",
        "delta,frozen,dual",
        "--synthetic",
        "400",
        "--seeds",
        "1,2",
    ];
    args.extend_from_slice(TINY_OFFLINE);
    let o = run(&args, Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert!(text.starts_with("variant,seed,r_x,r_y\n"));
    assert_eq!(text.lines().count() - 1, 6);
}

#[test]
fn repeated_runs_give_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut args = vec!["closed-loop", "--protocol", "disruption", "--seeds", "5"];
    args.extend_from_slice(TINY_CLOSED_LOOP);
    assert_eq!(code(&run(&args, Some(a.path()))), 0);
    assert_eq!(code(&run(&args, Some(b.path()))), 0);
    assert_eq!(
        fs::read(a.path().join("trials.csv")).unwrap(),
        fs::read(b.path().join("trials.csv")).unwrap()
    );
}
