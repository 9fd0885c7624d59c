use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use textdistill::distill::{import_json, load_artifact, ArtifactJson};
use textdistill::textdata::{load_csv_dataset, FieldPolicy};

fn tiny_config(out: &Path) -> Value {
    json!({
        "data": {"synthetic": {
            "num_classes": 2, "train_size": 40, "test_size": 20, "signature_tokens": 2,
            "background_tokens": 20, "min_len": 4, "max_len": 6, "signature_rate": 0.3, "seed": 3
        }},
        "embeddings": {"random": {"std": 0.5, "seed": 1}},
        "model": {"embed_dim": 3, "widths": [2, 3], "channels": 2, "num_classes": 2, "max_len": 6},
        "distill": {"per_class": 1, "outer_steps": 3, "inner_epochs": 1, "inner_batch_size": 4,
                    "real_batch_size": 8, "alpha_inner": 0.1, "alpha_outer": 0.1},
        "eval": {"epochs": 2, "batch_size": 8, "alpha": 0.1, "seeds": [0, 1, 2], "eval_batch_size": 16},
        "out_dir": out,
        "seed": 5
    })
}

fn write_config(dir: &Path, name: &str, config: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(config).unwrap()).unwrap();
    path
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_textdistill"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn distill_writes_a_deterministic_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = write_config(dir.path(), "run.json", &tiny_config(&a));
    assert_eq!(run(&["distill", "--config", p(&cfg)]).0, 0);
    assert_eq!(run(&["distill", "--config", p(&cfg), "--out", p(&b)]).0, 0);

    let set = load_artifact(a.join("distilled.ddtc")).unwrap();
    assert_eq!(set.len(), 2);
    assert_eq!(set.step(), 3);
    let bytes = read(a.join("distilled.ddtc"));
    assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2, "header M");
    for file in ["distilled.ddtc", "distill_metrics.csv"] {
        assert_eq!(read(a.join(file)), read(b.join(file)), "{file}");
    }
    let metrics = String::from_utf8(read(a.join("distill_metrics.csv"))).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "step,outer_loss,grad_norm");
    assert_eq!(lines.len(), 4);

    let manifest: Value = serde_json::from_slice(&read(a.join("run_manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["distill"]["seed"], 5);
    assert_eq!(manifest["outputs"].as_object().unwrap().len(), 2);

    let (code, _) = run(&["distill", "--config", p(&cfg), "--out", p(&b), "--seed", "6"]);
    assert_eq!(code, 0);
    assert_ne!(read(a.join("distilled.ddtc")), read(b.join("distilled.ddtc")));
}

#[test]
fn invalid_configs_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = tiny_config(&out);
    config["distill"]["alpha_outer"] = json!(-0.1);
    let cfg = write_config(dir.path(), "neg.json", &config);
    let (code, stderr) = run(&["distill", "--config", p(&cfg)]);
    assert_eq!(code, 2, "{stderr}");
    assert!(!out.exists());

    let mut config = tiny_config(&out);
    config["model"]["dropout"] = json!(0.5);
    let cfg = write_config(dir.path(), "unknown.json", &config);
    assert_eq!(run(&["distill", "--config", p(&cfg)]).0, 2);

    let mut config = tiny_config(&out);
    config["data"] = json!({"csv": {"train": dir.path().join("missing.csv"), "test": "x.csv", "num_classes": 2}});
    let cfg = write_config(dir.path(), "missing.json", &config);
    assert_eq!(run(&["distill", "--config", p(&cfg)]).0, 2);

    assert_eq!(run(&["distill", "--config", p(&dir.path().join("none.json"))]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert!(!out.exists());
}

#[test]
fn divergence_exits_3_without_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = tiny_config(&out);
    config["distill"]["alpha_outer"] = json!(1e38);
    let cfg = write_config(dir.path(), "run.json", &config);
    let (code, stderr) = run(&["distill", "--config", p(&cfg)]);
    assert_eq!(code, 3, "{stderr}");
    assert!(!out.join("distilled.ddtc").exists());
    assert!(!out.join("distill_metrics.csv").exists());
}

#[test]
fn eval_compares_three_sources_and_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "run.json", &tiny_config(&out));
    assert_eq!(run(&["distill", "--config", p(&cfg)]).0, 0);
    let (code, stderr) = run(&["eval", "--config", p(&cfg), "--sweep", "1,2"]);
    assert_eq!(code, 0, "{stderr}");

    let mut rdr = csv::Reader::from_path(out.join("comparison.csv")).unwrap();
    assert_eq!(
        rdr.headers().unwrap(),
        vec!["source", "seed", "accuracy", "relative_pct"]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 9);
    let mut sources: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    sources.sort();
    sources.dedup();
    assert_eq!(sources, ["distilled", "full", "random"]);

    let curves = String::from_utf8(read(out.join("curves.csv"))).unwrap();
    assert!(curves.starts_with("source,seed,epoch,accuracy\n"));
    assert_eq!(curves.lines().count(), 1 + 9 * 2);
    let sweep = String::from_utf8(read(out.join("sweep.csv"))).unwrap();
    assert!(sweep.starts_with("m,seed,accuracy\n"));
    assert_eq!(sweep.lines().count(), 1 + 2 * 3);

    let first = read(out.join("comparison.csv"));
    assert_eq!(run(&["eval", "--config", p(&cfg)]).0, 0);
    assert_eq!(read(out.join("comparison.csv")), first);
    assert_eq!(read(out.join("sweep.csv")), b"m,seed,accuracy\n");
}

#[test]
fn eval_rejects_mismatched_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "run.json", &tiny_config(&out));
    assert_eq!(run(&["distill", "--config", p(&cfg)]).0, 0);
    let artifact = out.join("distilled.ddtc");

    let mut other = tiny_config(&dir.path().join("other"));
    other["embeddings"]["random"]["seed"] = json!(2);
    let cfg2 = write_config(dir.path(), "hash.json", &other);
    let (code, stderr) = run(&["eval", "--config", p(&cfg2), "--artifact", p(&artifact)]);
    assert_eq!(code, 4, "{stderr}");
    assert!(stderr.contains("embedding hash"));

    let mut other = tiny_config(&dir.path().join("other"));
    other["model"]["max_len"] = json!(7);
    let cfg3 = write_config(dir.path(), "shape.json", &other);
    assert_eq!(run(&["eval", "--config", p(&cfg3), "--artifact", p(&artifact)]).0, 4);
    assert!(!dir.path().join("other").join("comparison.csv").exists());
}

#[test]
fn export_round_trips_and_rejects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = tiny_config(&out);
    config["model"]["max_len"] = json!(4);
    config["data"]["synthetic"]["max_len"] = json!(4);
    config["model"]["widths"] = json!([2]);
    let cfg = write_config(dir.path(), "run.json", &config);
    assert_eq!(run(&["distill", "--config", p(&cfg)]).0, 0);
    let artifact = out.join("distilled.ddtc");
    let json_dir = dir.path().join("json");
    let (code, stderr) = run(&["export", "--artifact", p(&artifact), "--out", p(&json_dir)]);
    assert_eq!(code, 0, "{stderr}");

    let json: ArtifactJson = serde_json::from_slice(&read(json_dir.join("distilled.json"))).unwrap();
    assert_eq!(json.samples.len(), 2);
    assert!(json
        .samples
        .iter()
        .all(|m| m.len() == 4 && m.iter().all(|r| r.len() == 3)));
    let back = import_json(&json).unwrap();
    let orig = load_artifact(&artifact).unwrap();
    let bits = |s: &[f32]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(back.samples().data()), bits(orig.samples().data()));
    assert_eq!(back, orig);

    let bytes = read(&artifact);
    let truncated = dir.path().join("truncated.ddtc");
    std::fs::write(&truncated, &bytes[..bytes.len() - 3]).unwrap();
    assert_eq!(run(&["export", "--artifact", p(&truncated)]).0, 5);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&truncated, &bad).unwrap();
    assert_eq!(run(&["export", "--artifact", p(&truncated)]).0, 5);
    assert_eq!(run(&["eval", "--config", p(&cfg), "--artifact", p(&truncated)]).0, 5);
}

#[test]
fn gen_synthetic_writes_loadable_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stderr) = run(&["gen-synthetic", "--out", p(dir.path()), "--seed", "9"]);
    assert_eq!(code, 0, "{stderr}");
    let train = load_csv_dataset(dir.path().join("train.csv"), 4, FieldPolicy::ConcatAll).unwrap();
    let test = load_csv_dataset(dir.path().join("test.csv"), 4, FieldPolicy::ConcatAll).unwrap();
    assert_eq!((train.len(), test.len()), (2000, 400));
    let spec = textdistill::eval::SyntheticSpec {
        seed: 9,
        ..Default::default()
    };
    assert_eq!(spec.generate().0, train);
}
