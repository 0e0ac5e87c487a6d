use std::fs;
use std::path::Path;

use dict_nmt::corpus::DictDataset;
use dict_nmt::experiment::{
    build_dataset, files, load_snapshot, run_pipeline, sweep, ExperimentConfig, SweepConfig, SWEEP_COLUMNS,
};
use dict_nmt::Error;
use serde_json::json;

fn tiny(mode: &str, train: &[&str], test: Option<&str>) -> serde_json::Value {
    let mut cfg = json!({
        "mode": mode,
        "seed": 3,
        "train_languages": train.iter().map(|c| json!({"code": c})).collect::<Vec<_>>(),
        "synthetic": {"seed": 5, "sentences_per_language": 300, "languages": [
            {"code": "a", "adjective_after_noun": true, "fronted_prepositional_phrase": true},
            {"code": "b", "verb_final": true, "drop_articles": true, "subject_particle": true},
            {"code": "c", "adjective_after_noun": true, "verb_final": true}]},
        "coverage_threshold": 0.5,
        "train_size": 60,
        "test": {"size": 20},
        "model": {"num_layers": 1, "d_model": 16, "d_ff": 32, "num_heads": 2, "dropout": 0.0, "max_seq_len": 96},
        "training": {"batch_size": 16, "epochs": 2}
    });
    if let Some(t) = test {
        cfg["test_language"] = json!({"code": t});
    }
    cfg
}

fn config(v: serde_json::Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&v.to_string()).unwrap()
}

fn config_error(v: serde_json::Value) -> String {
    ExperimentConfig::from_json(&v.to_string()).unwrap_err().to_string()
}

#[test]
fn config_rules_are_enforced() {
    assert!(config_error(tiny("one_to_one", &["a", "b"], None)).contains("exactly one training language"));
    assert!(config_error(tiny("many_to_one", &["a", "b"], None)).contains("needs a test_language"));
    assert!(config_error(tiny("many_to_one", &["a", "b"], Some("b"))).contains("also a training language"));
    assert!(config_error(tiny("one_to_one", &["z"], None)).contains("not in the synthetic spec"));

    let mut v = tiny("one_to_one", &["a"], None);
    v["coverage_threshold"] = json!(1.5);
    assert!(config_error(v).contains("coverage_threshold"));

    let mut v = tiny("one_to_one", &["a"], None);
    v["test"] = json!({"fraction": 0.0});
    assert!(config_error(v).contains("test fraction"));

    let mut v = tiny("one_to_one", &["a"], None);
    v["typo"] = json!(1);
    assert!(config_error(v).contains("unknown field"));

    let mut v = tiny("one_to_one", &["a"], None);
    v["training"]["epochs"] = json!(0);
    assert!(config_error(v).contains("epochs"));

    let mut v = tiny("one_to_one", &["a"], None);
    v.as_object_mut().unwrap().remove("synthetic");
    assert!(config_error(v).contains("needs corpus_source"));
}

#[test]
fn many_to_one_keeps_the_test_language_out_of_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(tiny("many_to_one", &["a", "b"], Some("c")));
    let d = build_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(d.summary.train_size, 60);
    let (train, _) = DictDataset::load(dir.path().join(files::TRAIN)).unwrap();
    let counts = train.language_counts();
    assert_eq!((counts["a"], counts["b"]), (30, 30));
    assert!(!counts.contains_key("c"));
    let (test, _) = DictDataset::load(dir.path().join(files::TEST)).unwrap();
    assert_eq!(test.len(), 20);
    assert!(test.pairs.iter().all(|p| p.lang == "c"));
}

#[test]
fn unmet_train_size_names_its_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = tiny("one_to_one", &["a"], None);
    v["train_size"] = json!(100_000);
    let err = build_dataset(&config(v), dir.path()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "split", .. }), "{err}");
    assert!(err.to_string().starts_with("stage `split` failed"));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != files::TIMING {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_reruns_identically_from_its_snapshot() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let art = run_pipeline(&config(tiny("one_to_one", &["a"], None)), a.path()).unwrap();
    assert!((0.0..=100.0).contains(&art.model_bleu.bleu));
    assert!(!a.path().join(files::INCOMPLETE).exists());
    run_pipeline(&load_snapshot(a.path()).unwrap(), b.path()).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(ta.len() > 10);
    assert_eq!(ta.iter().map(|f| &f.0).collect::<Vec<_>>(), tb.iter().map(|f| &f.0).collect::<Vec<_>>());
    for (x, y) in ta.iter().zip(&tb) {
        assert!(x.1 == y.1, "{} differs", x.0);
    }
}

#[test]
fn sweep_writes_one_row_per_bucket_and_records_failures() {
    let dir = tempfile::tempdir().unwrap();
    let grid: SweepConfig = serde_json::from_value(json!({
        "base": tiny("one_to_one", &["a"], None),
        "sizes": [40, 100000],
        "seeds": [1]
    }))
    .unwrap();
    let rows = sweep(&grid, dir.path()).unwrap();
    let ok: Vec<_> = rows.iter().filter(|r| r.cell == 0).collect();
    assert_eq!(ok.len(), 1 + 5, "all plus five coverage buckets");
    assert!(ok.iter().all(|r| r.error.is_empty()));
    let failed: Vec<_> = rows.iter().filter(|r| r.cell == 1).collect();
    assert_eq!(failed.len(), 1);
    assert!(failed[0].error.contains("stage `split`"));
    assert!(failed[0].model_bleu.is_none());

    let mut reader = csv::Reader::from_path(dir.path().join("sweep.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, SWEEP_COLUMNS);
    assert_eq!(reader.records().count(), rows.len());
    assert!(dir.path().join("cell-1").join(files::INCOMPLETE).exists());
}
