use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdmixer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "\
dataset = data.csv
dataset_name = synth
split = 0.7,0.1,0.2
lookback = 8
horizon = 4
patch_len = 4
stride = 2
embed_dim = 3
heads = 2
hidden = 4
kernel = 3
align_weight = 0.05
batch_size = 16
max_epochs = 2
patience = 2
";

/// Temp dir with a synthetic dataset and a tiny config; returns (dir, config path).
fn setup(extra: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = run(&["synth", "--preset", "two_scale", "--length", "200", "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, format!("{TINY}{extra}")).unwrap();
    (dir, cfg)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_one_checkpoint_per_seed() {
    let (dir, cfg) = setup("seeds = 1,2,3\n");
    let out = dir.path().join("run");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for seed in 1..=3 {
        let sd = out.join(format!("seed_{seed}"));
        assert!(sd.join("checkpoint/manifest.txt").exists());
        assert!(sd.join("checkpoint/tensors.bin").exists());
        assert!(sd.join("report.csv").exists());
    }
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 4);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("channels = 2"));
    assert!(echo.contains("use_mim = true"));
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, cfg) = setup("seeds = 4\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["train", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["metrics.csv", "summary.csv", "seed_4/report.csv", "seed_4/summary.txt", "seed_4/checkpoint/tensors.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let ckpt = a.join("seed_4/checkpoint");
    let e1 = dir.path().join("e1");
    let e2 = dir.path().join("e2");
    for out in [&e1, &e2] {
        let o = run(&["eval", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(e1.join("metrics.csv")).unwrap(), fs::read(e2.join("metrics.csv")).unwrap());
    // evaluating the trained checkpoint reproduces the training run's test metrics
    assert_eq!(fs::read(e1.join("metrics.csv")).unwrap(), fs::read(a.join("seed_4/metrics.csv")).unwrap());
}

#[test]
fn forecast_and_export_weights() {
    let (dir, cfg) = setup("seeds = 1\n");
    let run_dir = dir.path().join("run");
    assert!(run(&["train", "--config", s(&cfg), "--out", s(&run_dir)]).status.success());
    let ckpt = run_dir.join("seed_1/checkpoint");

    let fc = dir.path().join("fc");
    let o = run(&["forecast", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--window", "0", "--out", s(&fc)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let forecast = fs::read_to_string(fc.join("forecast.csv")).unwrap();
    assert_eq!(forecast.lines().next().unwrap(), "step,ch0,ch0_actual,ch1,ch1_actual");
    assert_eq!(forecast.lines().count(), 5);
    for f in ["granularity/head_1.csv", "granularity/head_2.csv", "granularity/final.csv", "amwg.csv"] {
        assert!(fc.join(f).exists(), "{f}");
    }

    let o = run(&["forecast", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--window", "100000", "--out", s(&fc)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("out of range"));

    let ew = dir.path().join("ew");
    let o = run(&["export-weights", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&ew)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let heat = fs::read_to_string(ew.join("amwg_heatmap.csv")).unwrap();
    assert_eq!(heat.lines().next().unwrap(), "channel_0,channel_1");
    assert_eq!(heat.lines().count(), 3);
}

#[test]
fn checkpoint_shape_mismatch_exits_2_naming_tensor() {
    let (dir, cfg) = setup("seeds = 1\n");
    let run_dir = dir.path().join("run");
    assert!(run(&["train", "--config", s(&cfg), "--out", s(&run_dir)]).status.success());
    let other = dir.path().join("other.cfg");
    fs::write(&other, TINY.replace("embed_dim = 3", "embed_dim = 5")).unwrap();
    let o = run(&["eval", "--config", s(&other), "--checkpoint", s(&run_dir.join("seed_1/checkpoint"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("embed_s.weight"), "{}", stderr(&o));
}

#[test]
fn baselines_train_through_the_cli() {
    let (dir, cfg) = setup("seeds = 1\nmodel = dual_branch\n");
    let out = dir.path().join("run");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["export-weights", "--config", s(&cfg), "--checkpoint", s(&out.join("seed_1/checkpoint"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_on_tiny_config() {
    let (_dir, cfg) = setup("");
    let o = run(&["gradcheck", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let err: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("max_rel_err="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4);
}

#[test]
fn gradcheck_fails_with_impossible_tolerance() {
    let (_dir, cfg) = setup("gradcheck_tol = 1e-300\n");
    let o = run(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_config_exits_2() {
    let (dir, _) = setup("");
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "dataset = data.csv\nheads = 7\nhorizon = 96\n").unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("must divide horizon"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, TINY.replace("data.csv", "nowhere.csv")).unwrap();
    let o = run(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_3() {
    let (dir, cfg) = setup("seeds = 1\nlr = 1e300\n");
    let o = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("run"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}
