use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn wavebound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavebound"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a small synthetic dataset and a fast training config.
fn small_setup(dir: &Path, objective: &str) -> PathBuf {
    let data = dir.join("synth.csv");
    if !data.exists() {
        let o = wavebound(&[
            "synth",
            "--length",
            "400",
            "--sigma",
            "0.5",
            "--seed",
            "3",
            "--out",
            p(&data),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let cfg = dir.join(format!("{}.cfg", objective.replace(':', "_")));
    fs::write(
        &cfg,
        format!(
            "# small run\ndata = {}\ninput_len = 24\noutput_len = 8\nhidden = 8\nmax_epochs = 3\npatience = 5\n\
             objective = {objective}\nseed = 2\n",
            data.display()
        ),
    )
    .unwrap();
    cfg
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn synth_writes_header_plus_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = wavebound(&[
        "synth",
        "--length",
        "2000",
        "--sigma",
        "0.5",
        "--seed",
        "1",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "T=2000 K=1");
    assert_eq!(read(&out).lines().count(), 2001);
}

#[test]
fn synth_noise_free_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for out in [&a, &b] {
        assert!(wavebound(&[
            "synth",
            "--length",
            "50",
            "--sigma",
            "0",
            "--seed",
            "9",
            "--out",
            p(out)
        ])
        .status
        .success());
    }
    assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn synth_zero_length_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = wavebound(&["synth", "--length", "0", "--out", p(&dir.path().join("x.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("length must be ≥ 1"), "{}", stderr(&o));
}

#[test]
fn plain_and_wave_runs_emit_comparable_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut headers = Vec::new();
    for obj in ["plain", "wave_indiv:0.01"] {
        let cfg = small_setup(dir.path(), obj);
        let out = dir.path().join(obj.replace(':', "_"));
        let o = wavebound(&["train", "--config", p(&cfg), "--out-dir", p(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        for f in [
            "metrics.csv",
            "log.csv",
            "log.jsonl",
            "per_step.csv",
            "gap.csv",
            "best.ckpt",
            "config.txt",
        ] {
            assert!(out.join(f).exists(), "{obj}: missing {f}");
        }
        assert!(read(out.join("config.txt")).contains(&format!("objective = {obj}")));
        let metrics = read(out.join("metrics.csv"));
        headers.push(metrics.lines().next().unwrap().to_string());
        assert_eq!(metrics.lines().count(), 4);
        assert_eq!(read(out.join("per_step.csv")).lines().count(), 1 + 8);
    }
    assert_eq!(headers[0], headers[1]);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "wave_indiv:0.01");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = wavebound(&["train", "--config", p(&cfg), "--out-dir", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in [
        "metrics.csv",
        "log.csv",
        "log.jsonl",
        "per_step.csv",
        "gap.csv",
        "best.ckpt",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resolved_config_reproduces_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "flooding:0.05");
    let a = dir.path().join("a");
    let o = wavebound(&[
        "train",
        "--config",
        p(&cfg),
        "--out-dir",
        p(&a),
        "--set",
        "learning_rate=3e-4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let b = dir.path().join("b");
    let o = wavebound(&["train", "--config", p(&a.join("config.txt")), "--out-dir", p(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(a.join("metrics.csv")), read(b.join("metrics.csv")));
    assert!(read(b.join("config.txt")).contains("learning_rate = 0.0003"));
}

#[test]
fn missing_config_names_path() {
    let o = wavebound(&["train", "--config", "/no/such/run.cfg"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/no/such/run.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "plain");
    let o = wavebound(&["train", "--config", p(&cfg), "--set", "lr=0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown key"));
}

#[test]
fn divergence_is_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "plain");
    let out = dir.path().join("run");
    let o = wavebound(&[
        "train",
        "--config",
        p(&cfg),
        "--out-dir",
        p(&out),
        "--set",
        "learning_rate=1e300",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("iteration"));
}

#[test]
fn singleton_sweep_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "wave_indiv:0.01");
    let sweep_dir = dir.path().join("sweep");
    let o = wavebound(&[
        "sweep",
        "--config",
        p(&cfg),
        "--out-dir",
        p(&sweep_dir),
        "--grid-spec",
        "eps=0.01",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let train_dir = dir.path().join("train");
    assert!(wavebound(&["train", "--config", p(&cfg), "--out-dir", p(&train_dir)])
        .status
        .success());

    let table = read(sweep_dir.join("sweep.csv"));
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(table.lines().count(), 2);
    let col = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];

    let test_row = read(train_dir.join("metrics.csv"));
    let test_mse = test_row
        .lines()
        .find(|l| l.starts_with("test,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .to_string();
    assert_eq!(col("test_mse"), test_mse);
}

#[test]
fn sweep_rows_reproduce_individually() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "wave_indiv:0.01");
    let sweep_dir = dir.path().join("sweep");
    let o = wavebound(&[
        "sweep",
        "--config",
        p(&cfg),
        "--out-dir",
        p(&sweep_dir),
        "--grid-spec",
        "eps=0.01,0.001",
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = read(sweep_dir.join("sweep.csv"));
    assert_eq!(table.lines().count(), 3);
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let at = |row: &str, name: &str| {
        row.split(',')
            .nth(header.iter().position(|h| *h == name).unwrap())
            .unwrap()
            .to_string()
    };
    for row in table.lines().skip(1) {
        let eps = at(row, "value");
        let out = dir.path().join(format!("eps{eps}"));
        let o = wavebound(&[
            "train",
            "--config",
            p(&cfg),
            "--out-dir",
            p(&out),
            "--objective",
            &format!("wave_indiv:{eps}"),
        ]);
        assert!(o.status.success());
        let metrics = read(out.join("metrics.csv"));
        let val = metrics
            .lines()
            .find(|l| l.starts_with("val,"))
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .to_string();
        assert_eq!(at(row, "val_mse"), val, "eps {eps}");
    }
}

#[test]
fn empty_grid_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "plain");
    let o = wavebound(&["sweep", "--config", p(&cfg), "--grid-spec", "b="]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));
}

#[test]
fn eval_matches_training_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "wave_indiv:0.01");
    let run = dir.path().join("run");
    assert!(wavebound(&["train", "--config", p(&cfg), "--out-dir", p(&run)])
        .status
        .success());

    let out = dir.path().join("eval.csv");
    let o = wavebound(&[
        "eval",
        "--checkpoint",
        p(&run.join("best.ckpt")),
        "--config",
        p(&run.join("config.txt")),
        "--split",
        "test",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let evaluated = read(&out);
    let test_line = evaluated.lines().nth(1).unwrap();
    assert!(read(run.join("metrics.csv")).lines().any(|l| l == test_line));

    // The checkpoint holds the best epoch, whose log row carries the same test MSE.
    let mse = test_line.split(',').nth(1).unwrap();
    let log = read(run.join("log.csv"));
    assert!(
        log.lines().skip(1).any(|l| l.split(',').nth(4) == Some(mse)),
        "{mse} not in\n{log}"
    );
}

#[test]
fn eval_missing_checkpoint_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "plain");
    let o = wavebound(&["eval", "--checkpoint", "/no/such/best.ckpt", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/no/such/best.ckpt"));
}

#[test]
fn slice_writes_odd_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_setup(dir.path(), "plain");
    let run = dir.path().join("run");
    assert!(wavebound(&["train", "--config", p(&cfg), "--out-dir", p(&run)])
        .status
        .success());
    let out = dir.path().join("slice.csv");
    let o = wavebound(&[
        "slice",
        "--checkpoint",
        p(&run.join("best.ckpt")),
        "--config",
        p(&cfg),
        "--steps",
        "7",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read(&out).lines().count(), 8);
}

#[test]
fn theorem_single_trial_is_finite_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = wavebound(&["theorem", "--set", "trials=1", "--out-dir", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let json = read(a.join("report.json"));
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    for key in ["mse_plain", "mse_wave", "theorem_bound", "condition_b_rate"] {
        assert!(report[key].as_f64().unwrap().is_finite(), "{key}");
    }
    assert_eq!(json, read(b.join("report.json")));
    assert!(a.join("report.txt").exists());
}

#[test]
fn theorem_reads_instance_config() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.cfg");
    fs::write(
        &inst,
        "rows = 1\ncols = 2\nslopes = 0.5, -0.5\nperturbation = 1, 1\ntrials = 50\nseed = 4\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = wavebound(&["theorem", "--instance-config", p(&inst), "--out-dir", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&read(out.join("report.json"))).unwrap();
    assert_eq!(report["trials"], 50);
    let bad = wavebound(&["theorem", "--set", "alpha=0.1"]);
    assert_eq!(bad.status.code(), Some(2));
}
