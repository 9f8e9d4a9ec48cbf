use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_markerconf"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

const QUERIES: &str = r#"{"kind":"query","dataset_id":"d","split":"train","query_id":"a","prompt_text":"What is the capital of France?","gold_answers":["Paris"],"task_kind":"qa"}
{"kind":"query","dataset_id":"d","split":"test","query_id":"b","prompt_text":"Which planet is red?","gold_answers":["Mars"],"task_kind":"multiple_choice","choices":["Venus","Mars","Saturn"]}
"#;

fn mock_config(dir: &Path, extra: &str) {
    fs::write(dir.join("queries.jsonl"), QUERIES).unwrap();
    fs::write(
        dir.join("run.toml"),
        format!("corpus = [\"queries.jsonl\"]\nseed = 1\nk = 2\n{extra}\n[judge]\nbackend = \"mock\"\n[generation]\nbackend = \"mock\"\n"),
    )
    .unwrap();
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().arg("--version").output().unwrap()), 0);
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--no-such-flag", "mic"])), 1);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["--threshold", "0", "mic"])), 1);
    assert_eq!(code(&run(dir.path(), &["--config", "missing.toml", "mic"])), 1);
    fs::write(dir.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "bad.toml", "mic"])), 1);
}

#[test]
fn zero_k_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    mock_config(dir.path(), "");
    let toml = fs::read_to_string(dir.path().join("run.toml")).unwrap().replace("k = 2", "k = 0");
    fs::write(dir.path().join("run.toml"), toml).unwrap();
    let o = run(dir.path(), &["--config", "run.toml", "generate"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn missing_annotations_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--out", "out", "metrics"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let o = run(dir.path(), &["--out", "out", "--corpus", "nope.jsonl", "annotate"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn malformed_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.jsonl"), "{\"kind\":\"query\",\"dataset_id\":\"d\"}\n").unwrap();
    let o = run(dir.path(), &["--out", "out", "--corpus", "c.jsonl", "mic"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn judge_failures_over_ceiling_exit_3_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    fs::copy(fixtures().join("golden_corpus.jsonl"), dir.path().join("c.jsonl")).unwrap();
    fs::write(
        dir.path().join("run.toml"),
        format!(
            "corpus = [\"c.jsonl\"]\n[judge]\nbackend = \"http\"\nbase_url = \"http://127.0.0.1:{port}\"\nretries = 1\nbackoff_ms = 0\ntimeout_secs = 2\n"
        ),
    )
    .unwrap();
    let o = run(dir.path(), &["--config", "run.toml", "--out", "out", "annotate"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let diag: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/annotate_diagnostics.json")).unwrap()).unwrap();
    assert!(diag["failure_rate"].as_f64().unwrap() > 0.01, "{diag}");
}

#[test]
fn http_backend_without_url_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::copy(fixtures().join("golden_corpus.jsonl"), dir.path().join("c.jsonl")).unwrap();
    let o = run(dir.path(), &["--out", "out", "--corpus", "c.jsonl", "annotate"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn empty_corpus_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    fs::write(dir.path().join("run.toml"), "corpus = [\"empty.jsonl\"]\n[judge]\nbackend = \"mock\"\n").unwrap();
    let o = run(dir.path(), &["--config", "run.toml", "--out", "out", "all"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("WARN"), "{}", stderr(&o));
    assert!(dir.path().join("out/annotations.jsonl").exists());
    assert!(dir.path().join("out/metrics.json").exists());
}

#[test]
fn generate_writes_k_samples_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    mock_config(dir.path(), "");
    let o = run(dir.path(), &["--config", "run.toml", "--out", "out", "generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = jsonl(&dir.path().join("out/corpus.jsonl"));
    assert_eq!(lines[0]["kind"], "meta");
    let responses: Vec<&Value> = lines.iter().filter(|l| l["kind"] == "response").collect();
    assert_eq!(responses.len(), 2);
    for r in &responses {
        assert_eq!(r["samples"].as_array().unwrap().len(), 2);
        assert!(!r["response_text"].as_str().unwrap().is_empty());
    }
    let mc = responses.iter().find(|r| r["query_id"] == "b").unwrap();
    let mut order: Vec<u64> = mc["choice_order"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    order.sort();
    assert_eq!(order, [0, 1, 2]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/generate_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["complete"], true);
    assert_eq!(manifest["completed"], 2);
    assert!(!dir.path().join("out/generate_partial.jsonl").exists());
}

#[test]
fn generate_resumes_from_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    mock_config(dir.path(), "");
    assert_eq!(code(&run(dir.path(), &["--config", "run.toml", "--out", "first", "generate"])), 0);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("first/generate_manifest.json")).unwrap()).unwrap();
    let lines = jsonl(&dir.path().join("first/corpus.jsonl"));
    let mut kept = lines.iter().find(|l| l["kind"] == "response" && l["query_id"] == "a").unwrap().clone();
    kept["response_text"] = Value::from("Resumed answer: Paris.");

    fs::create_dir_all(dir.path().join("second")).unwrap();
    let partial = serde_json::json!({"config_hash": manifest["config_hash"], "response": kept});
    fs::write(dir.path().join("second/generate_partial.jsonl"), format!("{partial}\n")).unwrap();
    let o = run(dir.path(), &["--config", "run.toml", "--out", "second", "generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let resumed = jsonl(&dir.path().join("second/corpus.jsonl"));
    let a = resumed.iter().find(|l| l["kind"] == "response" && l["query_id"] == "a").unwrap();
    assert_eq!(a["response_text"], "Resumed answer: Paris.");
    let b_first = lines.iter().find(|l| l["query_id"] == "b" && l["kind"] == "response").unwrap();
    let b_second = resumed.iter().find(|l| l["query_id"] == "b" && l["kind"] == "response").unwrap();
    assert_eq!(b_first, b_second);

    // Re-running over a complete corpus changes nothing.
    let before = fs::read(dir.path().join("second/corpus.jsonl")).unwrap();
    let o = run(dir.path(), &["--config", "run.toml", "--out", "second", "generate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(dir.path().join("second/corpus.jsonl")).unwrap(), before);
}

#[test]
fn annotations_match_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin()
        .args(["--config"])
        .arg(fixtures().join("golden.toml"))
        .arg("--out")
        .arg(&out)
        .arg("annotate")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = fs::read_to_string(out.join("annotations.jsonl")).unwrap();
    let (meta, body) = got.split_once('\n').unwrap();
    assert!(meta.contains("\"kind\":\"meta\""));
    let want = fs::read_to_string(fixtures().join("golden_annotations.jsonl")).unwrap();
    assert_eq!(body, want);
}

#[test]
fn full_pipeline_writes_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    mock_config(dir.path(), "threshold = 1\nsweep = [1, 2]");
    let o = run(dir.path(), &["--config", "run.toml", "--out", "out", "all"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["corpus.jsonl", "annotations.jsonl", "annotate_diagnostics.json", "mic_tables.jsonl", "mic_tables.csv", "metrics.json", "metrics.csv", "report/kde.csv"] {
        assert!(dir.path().join("out").join(f).exists(), "{f} missing");
    }
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/metrics.json")).unwrap()).unwrap();
    let thresholds: Vec<u64> = metrics["reports"].as_array().unwrap().iter().map(|r| r["threshold"].as_u64().unwrap()).collect();
    assert_eq!(thresholds, [1, 2]);
}
