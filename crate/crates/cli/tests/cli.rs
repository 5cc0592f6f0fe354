use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dysfluent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dysfluent")).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("stdout is not one JSON document ({e}): {}", String::from_utf8_lossy(&out.stdout)))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_requests(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
    let input = dir.join("requests.jsonl");
    fs::write(&input, lines.join("\n")).unwrap();
    input
}

#[test]
fn score_self_comparison_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.jsonl");
    fs::write(
        &r,
        "{\"id\": \"a\", \"tokens\": [\"the\", \"<word_rep>\", \"cat\", \"cat\"]}\n{\"id\": \"b\", \"tokens\": [\"go\"]}\n",
    )
    .unwrap();
    let out = dysfluent(&["score", "--ref", path(&r), "--hyp", path(&r), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let report = json_of(&out);
    assert_eq!(report["ter"], 0.0);
    assert_eq!(report["td"], 0.0);
    assert_eq!(report["weighted_f1"], 1.0);

    let text = dysfluent(&["score", "--ref", path(&r), "--hyp", path(&r)]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("TER"));
}

#[test]
fn score_rejects_unpaired_ids_as_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = dir.path().join("r.jsonl");
    let h = dir.path().join("h.jsonl");
    fs::write(&r, "{\"id\": \"a\", \"tokens\": [\"x\"]}\n").unwrap();
    fs::write(&h, "{\"id\": \"b\", \"tokens\": [\"x\"]}\n").unwrap();
    let out = dysfluent(&["score", "--ref", path(&r), "--hyp", path(&h)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(dysfluent(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dysfluent(&["gen-text", "--kind", "word_pro"]).status.code(), Some(1));
    let help = dysfluent(&["inject", "--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for flag in ["--wav", "--align", "--pause-at", "--prolong", "--duration", "--seed", "--json", "--workers"] {
        assert!(text.contains(flag), "help lacks {flag}");
    }
}

#[test]
fn synth_then_inject_pause_adds_exact_samples() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_requests(
        dir.path(),
        &[r#"{"id": "u1", "text_or_phones": "the cat sat", "level": "word", "speaker": 0}"#],
    );
    let outdir = dir.path().join("out");
    let out = dysfluent(&["synth", "--input", path(&input), "--outdir", path(&outdir), "--json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_of(&out)["written"], 1);

    let wav = outdir.join("u1.wav");
    let align = outdir.join("u1.align.json");
    let alignment: Value = serde_json::from_str(&fs::read_to_string(&align).unwrap()).unwrap();
    let boundary = alignment["intervals"][2]["start"].as_f64().unwrap();
    let injected = dir.path().join("paused.wav");
    let out = dysfluent(&[
        "inject",
        "--wav",
        path(&wav),
        "--align",
        path(&align),
        "--pause-at",
        &boundary.to_string(),
        "--duration",
        "1.0",
        "--out",
        path(&injected),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_of(&out)["added_samples"], 16000);
    let before = fs::metadata(&wav).unwrap().len();
    let after = fs::metadata(&injected).unwrap().len();
    assert_eq!(after - before, 32000);
    assert!(dir.path().join("paused.align.json").exists());

    // A time inside a phone is a data error.
    let out = dysfluent(&["inject", "--wav", path(&wav), "--align", path(&align), "--pause-at", "0.01", "--duration", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inject_prolong_with_sampled_duration_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_requests(
        dir.path(),
        &[r#"{"id": "u1", "text_or_phones": "S IY", "level": "phoneme", "speaker": 2}"#],
    );
    let outdir = dir.path().join("out");
    assert_eq!(dysfluent(&["synth", "--input", path(&input), "--outdir", path(&outdir)]).status.code(), Some(0));
    let run = |out: &str| {
        let o = dysfluent(&[
            "inject",
            "--wav",
            path(&outdir.join("u1.wav")),
            "--align",
            path(&outdir.join("u1.align.json")),
            "--prolong",
            "1",
            "--seed",
            "5",
            "--out",
            path(&dir.path().join(out)),
            "--json",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        json_of(&o)
    };
    let a = run("a.wav");
    let b = run("b.wav");
    assert_eq!(a["requested_s"], b["requested_s"]);
    let d = a["requested_s"].as_f64().unwrap();
    assert!((0.17..=0.8).contains(&d));
    assert_eq!(a["added_samples"].as_u64().unwrap(), (d * 16000.0).round() as u64);
}

#[test]
fn synth_failures_exit_three_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_requests(
        dir.path(),
        &[
            r#"{"id": "ok", "text_or_phones": "the cat", "level": "word", "speaker": 0}"#,
            r#"{"id": "bad", "text_or_phones": "qqzx", "level": "word", "speaker": 0}"#,
        ],
    );
    let outdir = dir.path().join("out");
    let out = dysfluent(&["synth", "--input", path(&input), "--outdir", path(&outdir)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(outdir.join("ok.wav").exists());
    let report: Value = serde_json::from_str(&fs::read_to_string(outdir.join("errors.json")).unwrap()).unwrap();
    assert_eq!(report["errors"][0]["id"], "bad");
}

#[test]
fn synth_through_external_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_requests(
        dir.path(),
        &[
            r#"{"id": "ok", "text_or_phones": "we go", "level": "word", "speaker": 1}"#,
            r#"{"id": "bad", "text_or_phones": "ZZ", "level": "phoneme", "speaker": 1}"#,
        ],
    );
    let outdir = dir.path().join("out");
    let bin = env!("CARGO_BIN_EXE_dysfluent");
    let out = dysfluent(&["synth", "--input", path(&input), "--outdir", path(&outdir), "--adapter", bin, "synth"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(outdir.join("ok.wav").exists() && outdir.join("ok.align.json").exists());
    assert!(!outdir.join(".adapter-work").exists());

    let out = dysfluent(&["synth", "--input", path(&input), "--outdir", path(&outdir), "--adapter", "false"]);
    assert_eq!(out.status.code(), Some(3));
}

fn corpus_config(dir: &Path, synthesizer: Value) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "master_seed": 3,
        "kinds": [{"kind": "word_rep", "count": 4}, {"kind": "phn_pau", "count": 4}],
        "speakers": [0, 1],
        "synthesizer": synthesizer,
        "output_dir": dir.join("corpus"),
    });
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    p
}

#[test]
fn build_corpus_twice_gives_identical_manifests_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = corpus_config(dir.path(), serde_json::json!({"type": "mock"}));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = dysfluent(&["build-corpus", "--config", path(&cfg), "--output-dir", path(&a), "--json", "--workers", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json_of(&out);
    assert_eq!(summary["dysfluent_records"], 16);
    assert_eq!(summary["fluent_records"], 1);
    let out = dysfluent(&["build-corpus", "--config", path(&cfg), "--output-dir", path(&b), "--workers", "3"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest = fs::read(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest, fs::read(b.join("manifest.jsonl")).unwrap());

    let out = dysfluent(&["stats", "--manifest", path(&a.join("manifest.jsonl")), "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let stats = json_of(&out);
    assert_eq!(stats["records"], 17);
    assert_eq!(stats["per_kind"]["word_rep"]["utterances"], 4);

    // A different seed changes the corpus.
    let c = dir.path().join("c");
    let out = dysfluent(&["build-corpus", "--config", path(&cfg), "--output-dir", path(&c), "--seed", "4", "--override-seed"]);
    assert_eq!(out.status.code(), Some(0));
    assert_ne!(manifest, fs::read(c.join("manifest.jsonl")).unwrap());
}

#[test]
fn build_corpus_through_external_adapter_matches_mock() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_dysfluent");
    let mock = corpus_config(dir.path(), serde_json::json!({"type": "mock"}));
    let out = dysfluent(&["build-corpus", "--config", path(&mock), "--output-dir", path(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(0));

    let ext = corpus_config(dir.path(), serde_json::json!({"type": "adapter", "command": [bin, "synth"]}));
    let out = dysfluent(&["build-corpus", "--config", path(&ext), "--output-dir", path(&dir.path().join("e"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(dir.path().join("m/manifest.jsonl")).unwrap(),
        fs::read(dir.path().join("e/manifest.jsonl")).unwrap()
    );

    let broken = corpus_config(dir.path(), serde_json::json!({"type": "adapter", "command": ["false"]}));
    let out = dysfluent(&["build-corpus", "--config", path(&broken), "--output-dir", path(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_config_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"fluent_ratio": 2.0}"#).unwrap();
    assert_eq!(dysfluent(&["build-corpus", "--config", path(&cfg)]).status.code(), Some(1));
    assert_eq!(dysfluent(&["build-corpus", "--config", path(&dir.path().join("missing.json"))]).status.code(), Some(2));
}

#[test]
fn gen_text_writes_text_labels_and_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("texts.txt");
    fs::write(&input, "a1\tthe cat sat on the mat\na2\tqqzx\na3\twe can go home now\n").unwrap();
    let text = dir.path().join("out.txt");
    let labels = dir.path().join("labels.jsonl");
    let tokens = dir.path().join("tokens.jsonl");
    let out = dysfluent(&[
        "gen-text",
        "--input",
        path(&input),
        "--kind",
        "word_del",
        "--seed",
        "9",
        "--out",
        path(&text),
        "--labels",
        path(&labels),
        "--tokens",
        path(&tokens),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<String> = fs::read_to_string(&text).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("word_del-a1\tword\t"));
    assert_eq!(fs::read_to_string(&labels).unwrap().lines().count(), 2);

    // The generated references score perfectly against themselves.
    let out = dysfluent(&["score", "--ref", path(&tokens), "--hyp", path(&tokens), "--json"]);
    assert_eq!(json_of(&out)["accuracy"], 1.0);

    let out = dysfluent(&["gen-text", "--input", path(&input), "--kind", "word_del", "--seed", "9", "--json"]);
    let doc = json_of(&out);
    assert_eq!(doc["generated"], 2);
    assert_eq!(doc["skipped"][0]["text_id"], "a2");
    assert_eq!(doc["utterances"].as_array().unwrap().len(), 2);
}

#[test]
fn gen_text_with_llm_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("texts.txt");
    fs::write(&input, "a1\tthe cat sat\n").unwrap();
    let fixtures = dir.path().join("fixtures");
    fs::create_dir(&fixtures).unwrap();
    let body = serde_json::json!({"choices": [{"message": {"content": "{\"dysfluent_text\": \"the the cat sat\"}"}}]});
    fs::write(fixtures.join("01.json"), serde_json::json!({"status": 200, "body": body}).to_string()).unwrap();
    let out = dysfluent(&[
        "gen-text",
        "--input",
        path(&input),
        "--kind",
        "word_rep",
        "--generator",
        "llm",
        "--fixtures",
        path(&fixtures),
        "--json",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = json_of(&out);
    assert_eq!(doc["utterances"][0]["text"], "the the cat sat");

    // A provider error is exit code 3.
    fs::write(fixtures.join("01.json"), r#"{"status": 500, "body": "overloaded"}"#).unwrap();
    let out = dysfluent(&[
        "gen-text",
        "--input",
        path(&input),
        "--kind",
        "word_rep",
        "--generator",
        "llm",
        "--fixtures",
        path(&fixtures),
    ]);
    assert_eq!(out.status.code(), Some(3));
}
