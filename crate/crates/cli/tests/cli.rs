//! End-to-end tests driving the compiled binary the way a user would.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tsot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsot"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn assert_ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).expect("fixture writes");
}

#[test]
fn an_oracle_run_is_deterministic_and_error_free() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    write(
        &config,
        r#"
out_dir = "placeholder"
seed = 7
oracle_transcript = true
oracle_embeddings = true
sweep_delays = [0, 2]

[corpus]
train_count = 0
eval_count = 3

[corpus.spec]
num_speakers = 2
vocab_words = 8
tokens_per_utterance = [3, 6]
intra_cosine = 1.0
inter_cosine = 0.1
"#,
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let config_str = config.to_str().unwrap();

    assert_ok(&tsot(&["run", "--config", config_str, "--out-dir", out_a.to_str().unwrap()]));
    let stdout = assert_ok(&tsot(&[
        "run",
        "--config",
        config_str,
        "--out-dir",
        out_b.to_str().unwrap(),
        "--json",
    ]));

    let report_a = fs::read(out_a.join("report.json")).unwrap();
    let report_b = fs::read(out_b.join("report.json")).unwrap();
    assert_eq!(report_a, report_b, "same config and seed must reproduce the report");

    let report: serde_json::Value = serde_json::from_str(&stdout).expect("run --json emits JSON");
    assert_eq!(report["wer"], 0.0);
    assert_eq!(report["sawer"], 0.0);
    assert_eq!(report["ser"], 0.0);
    assert_eq!(report["sid_accuracy"], 1.0);
    assert_eq!(report["eval_mixtures"], 3);
    assert_eq!(report["train_mixtures"], 0);
    let sweep = report["sweep"].as_array().expect("sweep rows present");
    assert_eq!(sweep.len(), 2);
    assert_eq!(sweep[0]["token_errors"], 0);
    assert_eq!(sweep[1]["token_errors"], 0);

    for name in ["manifest.json", "report.json"] {
        assert!(out_a.join(name).is_file(), "missing {name}");
    }
    assert!(out_a.join("hyp").join("hyp000.txt").is_file());
    assert!(out_a.join("attrib").join("att000.jsonl").is_file());
    assert!(out_a.join("corpus_eval").join("manifest.json").is_file());
}

#[test]
fn wer_evaluation_counts_each_edit_kind() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.jsonl");
    let hypothesis = dir.path().join("hyp.jsonl");
    let event = |token: &str| {
        format!(r#"{{"token":"{token}","speaker":"s","start":0.0,"duration":1.0}}"#)
    };
    write(
        &reference,
        &["a", "b", "c", "d", "e"].map(event).join("\n"),
    );
    write(&hypothesis, &["a", "x", "c", "e"].map(event).join("\n"));

    let stdout = assert_ok(&tsot(&[
        "eval",
        "--metric",
        "wer",
        "--ref",
        reference.to_str().unwrap(),
        "--hyp",
        hypothesis.to_str().unwrap(),
        "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["substitutions"], 1);
    assert_eq!(report["deletions"], 1);
    assert_eq!(report["insertions"], 0);
    assert_eq!(report["ref_words"], 5);
    assert_eq!(report["rate"], 0.4);
}

#[test]
fn cpwer_forgives_swapped_speaker_names() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("ref.jsonl");
    let hypothesis = dir.path().join("hyp.jsonl");
    let event = |token: &str, speaker: &str| {
        format!(r#"{{"token":"{token}","speaker":"{speaker}","start":0.0,"duration":1.0}}"#)
    };
    write(
        &reference,
        &[
            event("a", "s1"),
            event("b", "s1"),
            event("c", "s2"),
            event("d", "s2"),
        ]
        .join("\n"),
    );
    write(
        &hypothesis,
        &[
            event("a", "s2"),
            event("b", "s2"),
            event("c", "s1"),
            event("d", "s1"),
        ]
        .join("\n"),
    );

    let stdout = assert_ok(&tsot(&[
        "eval",
        "--metric",
        "cpwer",
        "--ref",
        reference.to_str().unwrap(),
        "--hyp",
        hypothesis.to_str().unwrap(),
        "--json",
    ]));
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["rate"], 0.0);
    assert_eq!(report["edits"], 0);
    assert_eq!(report["ref_words"], 4);
}

#[test]
fn attribution_labels_a_stream_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("stream.txt");
    let tvectors = dir.path().join("tvectors.jsonl");
    let profiles = dir.path().join("profiles.jsonl");
    let labeled = dir.path().join("labels.jsonl");
    write(&stream, "w1 <cc> w2 <cc> w3\n");
    let tv = |i: usize, e: [f64; 3]| {
        format!(
            r#"{{"embedding":[{},{},{}],"token_index":{i},"emission_frame":{i}}}"#,
            e[0], e[1], e[2]
        )
    };
    write(
        &tvectors,
        &[
            tv(0, [1.0, 0.0, 0.0]),
            tv(1, [0.0, 1.0, 0.0]),
            tv(2, [1.0, 0.0, 0.0]),
        ]
        .join("\n"),
    );
    write(
        &profiles,
        concat!(
            r#"{"speaker_id":"alice","dvector":[1.0,0.0,0.0]}"#,
            "\n",
            r#"{"speaker_id":"bob","dvector":[0.0,1.0,0.0]}"#,
        ),
    );

    assert_ok(&tsot(&[
        "attribute",
        "--mode",
        "sid",
        "--stream",
        stream.to_str().unwrap(),
        "--tvectors",
        tvectors.to_str().unwrap(),
        "--profiles",
        profiles.to_str().unwrap(),
        "--delay-words",
        "0",
        "--out",
        labeled.to_str().unwrap(),
    ]));

    let text = fs::read_to_string(&labeled).unwrap();
    let records: Vec<serde_json::Value> =
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    assert_eq!(records[0]["speaker"], "alice");
    assert_eq!(records[1]["speaker"], "bob");
    assert_eq!(records[2]["speaker"], "alice");
    assert_eq!(records[1]["channel"], 1);
    assert_eq!(records[2]["channel"], 0);

    let missing_profiles = tsot(&[
        "attribute",
        "--mode",
        "sid",
        "--stream",
        stream.to_str().unwrap(),
        "--tvectors",
        tvectors.to_str().unwrap(),
    ]);
    assert!(!missing_profiles.status.success());
    let stderr = String::from_utf8_lossy(&missing_profiles.stderr);
    assert!(stderr.contains("--profiles"), "unhelpful error: {stderr}");
}

#[test]
fn simulate_train_decode_round_trips_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    write(
        &spec,
        r#"
num_speakers = 2
universe_speakers = 4
pool_size = 4
vocab_words = 6
tokens_per_utterance = [2, 3]
dvec_dim = 6
seed = 11
"#,
    );
    let corpus = dir.path().join("corpus");
    let stdout = assert_ok(&tsot(&[
        "simulate",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
        "--count",
        "2",
    ]));
    assert!(stdout.contains("2 mixtures"), "unexpected summary: {stdout}");
    assert!(corpus.join("mix001").join("events.jsonl").is_file());

    let asr = dir.path().join("asr.ckpt");
    assert_ok(&tsot(&[
        "asr-train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        asr.to_str().unwrap(),
        "--epochs",
        "1",
    ]));
    assert!(asr.is_file());

    let spk = dir.path().join("spk.ckpt");
    assert_ok(&tsot(&[
        "spk-train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--asr",
        asr.to_str().unwrap(),
        "--out",
        spk.to_str().unwrap(),
        "--epochs",
        "1",
    ]));
    assert!(spk.is_file());

    let hyp = dir.path().join("hyp");
    let summary = assert_ok(&tsot(&[
        "decode",
        "--corpus",
        corpus.to_str().unwrap(),
        "--asr",
        asr.to_str().unwrap(),
        "--out",
        hyp.to_str().unwrap(),
    ]));
    assert!(summary.contains("decoded 2 streams"), "unexpected summary: {summary}");
    for name in ["hyp000.txt", "hyp000.jsonl", "hyp001.txt", "hyp001.jsonl"] {
        assert!(hyp.join(name).is_file(), "missing {name}");
    }
}
