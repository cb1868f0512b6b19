use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_stancebridge");

const TINY: &str = r#"
seeds = [3]

[paths]
output = "out"

[corpora.en]
format = "synthetic"
seed = 1
generator = { n_examples = 4 }

[plans.dr2]
mode = "DR"
base_language = "en"
sources = [{ corpus = "en", language = "en" }]
intermediates = ["fr", "de"]
seed = 0
"#;

const SMALL: &str = r#"
seeds = [0, 1]

[paths]
output = "out"

[corpora.source]
format = "synthetic"
seed = 1
generator = { n_examples = 60 }

[corpora.target]
format = "translated"
source = "source"
hops = ["zu", "en"]

[plans.dr1]
mode = "DR"
base_language = "en"
sources = [{ corpus = "source", language = "en" }]
intermediates = ["xh"]
seed = 0

[pipeline.model]
embedding_dim = 8
hidden_dim = 8
head_hidden_dim = 8

[pipeline.classifier]
schedule = { epochs_per_stage = [1, 1, 1, 1] }

[[experiments]]
name = "English"
role = "DLB"
train = ["source"]
tests = [{ label = "Target", corpus = "target" }]

[[experiments]]
name = "Randomized-English"
role = "DR_sweep"
plan = "dr1"
sweep = [1]
tests = [{ label = "Target", corpus = "target" }]

[tables.table1]
layout = "table1"
rows = ["English", "Randomized-English-1"]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .args(["--jobs", "1"])
        .args(args)
        .env_remove("STANCEBRIDGE_MT_KEY")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn build_writes_randomized_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = run(&cfg, &["build"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("out/corpora/dr2.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 12);
    assert!(dir.path().join("out/resolved-config.toml").exists());
    assert!(dir
        .path()
        .join("out/cache/translations-mock-s0.jsonl")
        .exists());
}

#[test]
fn rebuild_is_served_from_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    assert_eq!(run(&cfg, &["build"]).status.code(), Some(0));
    let first = fs::read(dir.path().join("out/corpora/dr2.jsonl")).unwrap();
    // A cache-only backend fails on any miss, so success means no new calls.
    let o = run(&cfg, &["--backend", "cached", "build"]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "replay defaults to the live cache"
    );
    let cfg = write_config(
        dir.path(),
        &format!("{TINY}\n[translation]\nreplay = \"mock\"\n"),
    );
    let o = run(&cfg, &["--backend", "cached", "build"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        fs::read(dir.path().join("out/corpora/dr2.jsonl")).unwrap(),
        first
    );
}

#[test]
fn unknown_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("seed = 0\n", "seed = 0\nn_r = 2\n");
    let cfg = write_config(dir.path(), &text);
    let o = run(&cfg, &["build"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_r"), "{}", stderr(&o));
}

#[test]
fn live_backend_without_key_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let o = run(&cfg, &["--backend", "live", "build"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("STANCEBRIDGE_MT_KEY"), "{}", stderr(&o));
}

#[test]
fn missing_corpus_file_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace(
        "format = \"synthetic\"\nseed = 1\ngenerator = { n_examples = 4 }",
        "format = \"semeval\"\npath = \"absent.txt\"\nlanguage = \"en\"",
    );
    let cfg = write_config(dir.path(), &text);
    assert_eq!(run(&cfg, &["build"]).status.code(), Some(2));
}

#[test]
fn eval_payloads_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = run(
        &cfg,
        &["--out", dir.path().join("a").to_str().unwrap(), "eval"],
    );
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let b = run(
        &cfg,
        &["--out", dir.path().join("b").to_str().unwrap(), "eval"],
    );
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    for name in ["English", "Randomized-English-1"] {
        let file = format!("reports/{name}.metrics.json");
        let pa = fs::read(dir.path().join("a").join(&file)).unwrap();
        let pb = fs::read(dir.path().join("b").join(&file)).unwrap();
        assert!(!pa.is_empty());
        assert_eq!(pa, pb, "{name}");
    }
}

#[test]
fn reproduce_renders_table_and_seed_override_applies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = run(&cfg, &["--seed", "5", "reproduce", "--layout", "table1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let md = fs::read_to_string(dir.path().join("out/tables/table1.md")).unwrap();
    assert!(md.contains("| English |"), "{md}");
    assert!(md.contains("| Randomized-English-1 |"), "{md}");
    assert!(dir.path().join("out/tables/table1.csv").exists());
    let report = fs::read_to_string(dir.path().join("out/reports/English.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["seeds"], serde_json::json!([5]));

    // Same spec again: reports are reused, not recomputed.
    let before = fs::metadata(dir.path().join("out/reports/English.json"))
        .unwrap()
        .modified()
        .unwrap();
    let o = run(&cfg, &["--seed", "5", "reproduce", "--layout", "table1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let after = fs::metadata(dir.path().join("out/reports/English.json"))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(before, after);

    let o = run(&cfg, &["reproduce", "--layout", "table2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_writes_checkpoint_and_vocab() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let o = run(&cfg, &["train", "--experiment", "English"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let model_dir = dir.path().join("out/models/English/seed-0");
    let ckpt = fs::read(model_dir.join("model.ckpt")).unwrap();
    assert_eq!(&ckpt[..8], b"STNCBRDG");
    assert!(
        fs::read_to_string(model_dir.join("vocab.txt"))
            .unwrap()
            .lines()
            .count()
            > 4
    );
    let o = run(&cfg, &["train", "--experiment", "Nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    fs::create_dir_all(dir.path().join("out")).unwrap();
    let held = fs::File::create(dir.path().join("out/.stancebridge.lock")).unwrap();
    held.lock().unwrap();
    let o = run(&cfg, &["build"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("another stancebridge command"),
        "{}",
        stderr(&o)
    );
    held.unlock().unwrap();
    assert_eq!(run(&cfg, &["build"]).status.code(), Some(0));
}
