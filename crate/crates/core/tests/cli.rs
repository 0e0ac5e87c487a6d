use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dict-nmt")).args(args).output().unwrap()
}

fn write_config(dir: &Path, train_size: usize) -> String {
    let cfg = json!({
        "mode": "one_to_one",
        "seed": 1,
        "train_languages": [{"code": "a"}],
        "synthetic": {"seed": 2, "sentences_per_language": 200, "languages": [{"code": "a", "verb_final": true}]},
        "coverage_threshold": 0.4,
        "train_size": train_size,
        "test": {"size": 10},
        "model": {"num_layers": 1, "d_model": 8, "d_ff": 16, "num_heads": 2, "max_seq_len": 96},
        "training": {"batch_size": 16, "epochs": 1}
    });
    let path = dir.join(format!("cfg-{train_size}.json"));
    fs::write(&path, cfg.to_string()).unwrap();
    path.display().to_string()
}

#[test]
fn every_subcommand_succeeds_on_a_small_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 40);
    for cmd in ["dict-translate", "build-dataset", "train", "evaluate"] {
        let out = dir.path().join(cmd);
        let o = run(&[cmd, "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(dir.path().join("dict-translate/a.intermediate.tsv").exists());
    // evaluate ran the earlier stages itself
    let eval = dir.path().join("evaluate");
    for f in ["train.tsv", "model.ckpt", "bleu_model.json", "bleu_baseline.json"] {
        assert!(eval.join(f).exists(), "{f}");
    }

    let sweep_cfg = dir.path().join("sweep.json");
    let base: serde_json::Value = serde_json::from_str(&fs::read_to_string(&cfg).unwrap()).unwrap();
    fs::write(&sweep_cfg, json!({"base": base, "seeds": [1, 2]}).to_string()).unwrap();
    let out = dir.path().join("sweep");
    let o = run(&["sweep", "--config", sweep_cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("sweep.csv").exists());
}

#[test]
fn failures_exit_nonzero_with_the_stage_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();

    let missing = dir.path().join("nope.json");
    let o = run(&["build-dataset", "--config", missing.to_str().unwrap(), "--out", out]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `config` failed"));

    let cfg = write_config(dir.path(), 100_000);
    let o = run(&["train", "--config", &cfg, "--out", out]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage `split` failed"));

    let o = run(&["evaluate", "--config", &cfg]);
    assert!(!o.status.success(), "--out is required");
}
