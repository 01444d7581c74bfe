//! The `dropmix` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn dropmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dropmix")).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn result_lines(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("results.csv"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

const FAST: [&str; 10] = [
    "--sbm",
    "20x2:0.3:0.03",
    "--hidden",
    "8",
    "--epochs",
    "4",
    "--warmup",
    "1",
    "--synth-per-anchor",
    "4",
];

#[test]
fn run_writes_metrics_checkpoint_and_results_row() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = dropmix(&[
        "run", "--sbm", "100x2", "--mode", "none", "--seed", "1", "--out", out_dir,
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    let id = summary["run_id"].as_str().unwrap();
    assert!(summary["test_acc"].as_f64().unwrap() >= 0.95);
    let metrics = std::fs::read_to_string(dir.path().join(format!("{id}.metrics.jsonl"))).unwrap();
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["epoch", "loss", "val_acc", "hard_mean", "bank_size", "ms"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert!(dir.path().join(format!("{id}.encoder.bin")).exists());
    let rows = result_lines(dir.path());
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("run_id,mode,view_mode,alpha,beta,gamma,lambda,seed,val_acc,test_acc"));
}

#[test]
fn dropmix_with_full_gamma_reproduces_mixup() {
    let dir = tempfile::tempdir().unwrap();
    let accs: Vec<f64> = [
        ["--mode", "dropmix", "--gamma", "1.0"],
        ["--mode", "mixup", "--gamma", "0.3"],
    ]
    .iter()
    .enumerate()
    .map(|(i, mode)| {
        let out_dir = dir.path().join(i.to_string());
        let mut args = vec![
            "run", "--seed", "7", "--lambda", "0.3", "--epochs", "30", "--warmup", "10",
        ];
        args.extend_from_slice(mode);
        args.extend_from_slice(&["--out", out_dir.to_str().unwrap()]);
        let out = dropmix(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        stdout_json(&out)["test_acc"].as_f64().unwrap()
    })
    .collect();
    assert_eq!(accs[0], accs[1]);
}

#[test]
fn sweep_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let mut args = vec!["sweep", "--gamma", "0.1:0.6:0.1", "--seeds", "10", "--out", out_dir];
    args.extend_from_slice(&FAST);
    let out = dropmix(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(result_lines(dir.path()).len(), 1 + 60);

    let results = dir.path().join("results.csv");
    let agg = dropmix(&["aggregate", results.to_str().unwrap()]);
    assert!(agg.status.success());
    let text = String::from_utf8_lossy(&agg.stdout);
    assert_eq!(text.lines().count(), 6);
    assert!(text.lines().all(|l| l.contains("(n=10)")));

    let two = dir.path().join("two");
    let out = dropmix(&[
        "sweep",
        "--sbm",
        "20x2:0.3:0.03,10x3:0.4:0.05",
        "--hidden",
        "8",
        "--epochs",
        "3",
        "--warmup",
        "1",
        "--synth-per-anchor",
        "4",
        "--seeds",
        "0,1",
        "--out",
        two.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(result_lines(&two).len(), 1 + 4);

    let summary = dir.path().join("summary.csv");
    let agg = dropmix(&[
        "aggregate",
        results.to_str().unwrap(),
        "--out",
        summary.to_str().unwrap(),
    ]);
    assert!(agg.status.success());
    let csv = std::fs::read_to_string(summary).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.starts_with("mode,view_mode,alpha,beta,gamma,lambda,n,mean,std,config"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.conf");
    std::fs::write(&file, "# shared\nmode = cutmix\ngamma = 0.5\nhidden = 8\n").unwrap();
    let out_dir = dir.path().join("out");
    let mut args = vec![
        "run",
        "--config",
        file.to_str().unwrap(),
        "--gamma",
        "0.2",
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(&FAST[..2]);
    args.extend_from_slice(&FAST[4..]);
    let out = dropmix(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let row = &result_lines(&out_dir)[1];
    assert!(row.contains(",cutmix,"));
    assert!(row.contains(r#""gamma"":0.2"#));
    assert!(row.contains(r#""hidden"":8"#));
}

fn error_of(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with('{')).expect("json error line");
    serde_json::from_str::<serde_json::Value>(line).unwrap()["error"].clone()
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for bad in [
        ["--gamma", "1.5"],
        ["--mode", "shuffle"],
        ["--alpha", "0.99"],
        ["--lr", "fast"],
    ] {
        let mut args = vec!["run", "--out", out_dir];
        args.extend_from_slice(&bad);
        let out = dropmix(&args);
        assert_eq!(out.status.code(), Some(2), "{bad:?}");
        assert_eq!(error_of(&out)["stage"], "config");
    }
    let unknown = dir.path().join("bad.conf");
    std::fs::write(&unknown, "colour = blue\n").unwrap();
    let out = dropmix(&["run", "--config", unknown.to_str().unwrap(), "--out", out_dir]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = dropmix(&[
        "run",
        "--dataset",
        missing.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_of(&out)["stage"], "graph");

    let broken = dir.path().join("broken");
    std::fs::create_dir_all(&broken).unwrap();
    std::fs::write(broken.join("features.txt"), "2 1\n0.5\n").unwrap();
    std::fs::write(broken.join("edges.txt"), "0 1\n").unwrap();
    let out = dropmix(&[
        "run",
        "--dataset",
        broken.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn dataset_directory_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    dropmix::generate_sbm(15, 2, 0.4, 0.02, 4, 3)
        .unwrap()
        .write(&data)
        .unwrap();
    let out_dir = dir.path().join("out");
    let mut args = vec![
        "run",
        "--dataset",
        data.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(&FAST[2..]);
    let out = dropmix(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("relu.conf");
    std::fs::write(&conf, "layers = 2\nfinal_activation = true\n").unwrap();
    let out = dropmix(&[
        "run",
        "--config",
        conf.to_str().unwrap(),
        "--lr",
        "1e8",
        "--hidden",
        "4",
        "--epochs",
        "10",
        "--warmup",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let err = error_of(&out);
    assert_eq!(err["kind"], "diverged");
    assert_eq!(err["stage"], "trainer");
}
