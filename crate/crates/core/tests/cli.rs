mod common;

use std::path::{Path, PathBuf};

use common::*;
use dts_core::cli::{load_checkpoint, ModelKind};
use dts_core::data::{load_csv, write_csv, Schema};

const CONFIG: &str = r#"{
  "schema": {"t": 16, "d": 1, "k": 5},
  "model": {"latent": 4, "segments": [2, 2], "hidden": 6},
  "train": {"epochs": 2, "batch": 16, "lr": 0.003, "eval_samples": 2},
  "synth": {"samples_per_domain": 60, "domains": 2, "noise_std": 0.05,
            "shift": {"offset": 0.7, "freq_scale": 1.2}}
}"#;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tmp();
        let root = dir.path().to_path_buf();
        std::fs::write(root.join("cfg.json"), CONFIG).unwrap();
        let o = run_dts(&[
            "generate",
            "--config",
            path_str(&root.join("cfg.json")),
            "--out",
            path_str(&root.join("all.csv")),
            "--factors-out",
            path_str(&root.join("factors.csv")),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        let schema = Schema { t: 16, d: 1, k: 5 };
        let all = load_csv(root.join("all.csv"), &schema).unwrap();
        write_csv(root.join("source.csv"), &all.subset(&all.rows_in_domain(0))).unwrap();
        write_csv(root.join("target.csv"), &all.subset(&all.rows_in_domain(1))).unwrap();
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> String {
        path_str(&self.root.join(name)).to_string()
    }

    fn dts(&self, args: &[&str]) -> std::process::Output {
        let cfg = self.p("cfg.json");
        let mut full: Vec<&str> = args.to_vec();
        if matches!(args[0], "train" | "adapt") {
            full.extend(["--config", &cfg]);
        }
        run_dts(&full)
    }
}

fn progress_keys(line: &str) -> Vec<&str> {
    line.split(' ').map(|kv| kv.split('=').next().unwrap()).collect()
}

#[test]
fn train_then_inspect() {
    let f = Fixture::new();
    let o = f.dts(&["train", "--data", &f.p("source.csv"), "--out", &f.p("m.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(progress_keys(l), ["epoch", "loss", "mi", "tc", "dim_kl", "recon"]);
        assert!(l.starts_with(&format!("epoch={} ", i + 1)));
    }
    let ckpt = load_checkpoint(Path::new(&f.p("m.json"))).unwrap();
    assert_eq!(ckpt.kind, ModelKind::Individual);
    assert_eq!(ckpt.epoch, 2);

    let o = run_dts(&[
        "traverse", "--ckpt", &f.p("m.json"), "--input", &f.p("source.csv"), "--lo", "-2", "--hi", "2", "--steps", "3",
        "--out", &f.p("trav.csv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    // 60 seeds x 4 dims x 3 steps
    assert!(stdout(&o).contains("720"));

    let o = run_dts(&[
        "eval", "--ckpt", &f.p("m.json"), "--data", &f.p("all.csv"), "--factors", &f.p("factors.csv"), "--out",
        &f.p("report.json"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.p("report.json")).unwrap()).unwrap();
    for key in ["mig", "mi", "tc", "dim_kl", "recon_loglik", "active_units", "accuracies", "proxy_discrepancy", "config_echo"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
    let mig = report["mig"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mig));
    assert!(report["accuracies"].get("domain_from_z_d").is_some());

    let o = run_dts(&["decompose", "--ckpt", &f.p("m.json"), "--data", &f.p("source.csv"), "--out", &f.p("d.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let d: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.p("d.json")).unwrap()).unwrap();
    let sum = d["mi"].as_f64().unwrap() + d["tc"].as_f64().unwrap() + d["dim_kl"].as_f64().unwrap();
    assert!((sum - d["kl"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn adapt_and_evaluate_group_model() {
    let f = Fixture::new();
    let o = f.dts(&["adapt", "--data", &f.p("source.csv"), "--target", &f.p("target.csv"), "--out", &f.p("g.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2);
    let ckpt = load_checkpoint(Path::new(&f.p("g.json"))).unwrap();
    assert_eq!(ckpt.kind, ModelKind::Group);

    let o = run_dts(&["eval", "--ckpt", &f.p("g.json"), "--data", &f.p("target.csv"), "--out", &f.p("r.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.p("r.json")).unwrap()).unwrap();
    let acc = report["accuracies"]["class_head"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(report.get("mig").is_none());

    let o = f.dts(&[
        "adapt", "--data", &f.p("source.csv"), "--target", &f.p("target.csv"), "--source-only", "--out", &f.p("s.json"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let f = Fixture::new();
    let src = f.p("source.csv");
    let o = f.dts(&["train", "--data", &src, "--out", &f.p("full.json"), "--epochs", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = f.dts(&["train", "--data", &src, "--out", &f.p("half.json"), "--epochs", "2"]);
    assert!(o.status.success());
    let o = f.dts(&["train", "--data", &src, "--resume", &f.p("half.json"), "--out", &f.p("resumed.json"), "--epochs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("epoch=3 "));
    let full = load_checkpoint(Path::new(&f.p("full.json"))).unwrap();
    let resumed = load_checkpoint(Path::new(&f.p("resumed.json"))).unwrap();
    assert_eq!(full.params, resumed.params);
    assert_eq!(full.adam, resumed.adam);
    assert_eq!(full.epoch, 4);
    assert_eq!(resumed.epoch, 4);
}

#[test]
fn damaged_or_mismatched_checkpoints_exit_two() {
    let f = Fixture::new();
    let o = f.dts(&["train", "--data", &f.p("source.csv"), "--out", &f.p("m.json"), "--epochs", "1"]);
    assert!(o.status.success());

    let text = std::fs::read_to_string(f.p("m.json")).unwrap();
    std::fs::write(f.p("cut.json"), &text[..text.len() / 2]).unwrap();
    let o = run_dts(&["traverse", "--ckpt", &f.p("cut.json"), "--input", &f.p("source.csv"), "--out", &f.p("t.csv")]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!Path::new(&f.p("t.csv")).exists());

    let o = f.dts(&[
        "adapt", "--data", &f.p("source.csv"), "--target", &f.p("target.csv"), "--resume", &f.p("m.json"), "--out",
        &f.p("g.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!Path::new(&f.p("g.json")).exists());

    let o = run_dts(&[
        "eval", "--ckpt", &f.p("m.json"), "--data", &f.p("source.csv"), "--segments", "3,3", "--out", &f.p("r.json"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("segments"));
    assert!(!Path::new(&f.p("r.json")).exists());

    let o = run_dts(&["decompose", "--ckpt", &f.p("nope.json"), "--data", &f.p("source.csv"), "--out", &f.p("d.json")]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn invalid_configuration_writes_nothing() {
    let f = Fixture::new();
    let o = f.dts(&["train", "--data", &f.p("source.csv"), "--out", &f.p("m.json"), "--batch", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.batch"), "{}", stderr(&o));
    assert!(!Path::new(&f.p("m.json")).exists());

    let o = f.dts(&["train", "--data", &f.p("source.csv"), "--out", &f.p("m.json"), "--mode", "dts", "--alpha", "-1", "--beta", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!Path::new(&f.p("m.json")).exists());

    let o = f.dts(&[
        "adapt", "--data", &f.p("source.csv"), "--target", &f.p("target.csv"), "--segments", "1,3", "--out", &f.p("g.json"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("model.segments"));
    assert!(!Path::new(&f.p("g.json")).exists());

    let o = run_dts(&["train", "--data", &f.p("missing.csv"), "--out", &f.p("m.json"), "--config", &f.p("cfg.json")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.csv"));
}
