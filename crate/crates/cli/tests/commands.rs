use std::path::Path;
use std::process::{Command, Output};

fn convtts(out: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_convtts"));
    cmd.args(["--preset", "tiny", "--out-dir"]).arg(out).args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Metrics rows without the trailing wall-time column.
fn metrics_without_time(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn corpus_writes_manifest_and_audio() {
    let dir = tempfile::tempdir().unwrap();
    ok(&convtts(dir.path(), &["corpus", "--utterances", "5"], &[]));
    let manifest = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.trim().is_empty()).count(), 5);
    assert!(dir.path().join("wav/utt0004.wav").exists());
    assert!(dir.path().join("corpus.json").exists());
}

#[test]
fn train_then_synth() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("checkpoint.ckpt");
    ok(&convtts(dir.path(), &["train", "--steps", "3"], &[]));
    let rows = metrics_without_time(&dir.path().join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("step,mel"));
    assert!(ck.exists());

    // A done threshold above one never fires, so decoding runs to the step
    // budget and the output is long enough for the vocoder.
    let synth = convtts(
        dir.path(),
        &["synth", "--checkpoint", ck.to_str().unwrap(), "--text", "bad cafe.", "--constraint", "on"],
        &[("CONVTTS_DONE_THRESHOLD", "2.0")],
    );
    ok(&synth);
    assert!(dir.path().join("out.wav").exists());
    assert!(dir.path().join("attention_layer0.csv").exists());
    assert!(dir.path().join("mel.csv").exists());
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.txt")).unwrap();
    assert!(diag.contains("regressions(repeat proxy) 0"), "{diag}");
    let att = std::fs::read_to_string(dir.path().join("attention_layer0.csv")).unwrap();
    assert!(att.lines().next().unwrap().ends_with(",argmax"));
}

#[test]
fn same_seed_same_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&convtts(d.path(), &["--seed", "7", "train", "--steps", "2"], &[]));
    }
    assert_eq!(
        metrics_without_time(&a.path().join("metrics.csv")),
        metrics_without_time(&b.path().join("metrics.csv"))
    );
}

#[test]
fn resume_appends_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("checkpoint.ckpt");
    ok(&convtts(dir.path(), &["train", "--steps", "2"], &[]));
    ok(&convtts(dir.path(), &["train", "--steps", "1", "--checkpoint", ck.to_str().unwrap()], &[]));
    let rows = metrics_without_time(&dir.path().join("metrics.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("3,"));
}

#[test]
fn bench_reports_one_row_per_sweep_point() {
    let dir = tempfile::tempdir().unwrap();
    ok(&convtts(
        dir.path(),
        &["bench", "--streams", "4", "--seconds", "0"],
        &[("CONVTTS_MAX_STEPS_FACTOR", "0.2")],
    ));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    // 1, 2, 4 plus the header.
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("streams,"));
}

#[test]
fn pca_and_diagnose_on_multi_speaker_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("multi.toml");
    std::fs::write(&cfg, "\"Number of Speakers\" = 4\n\"Speaker Embedding Dim.\" = 8\n").unwrap();
    let ck = dir.path().join("checkpoint.ckpt");
    ok(&convtts(dir.path(), &["--config", cfg.to_str().unwrap(), "train", "--steps", "1"], &[]));
    ok(&convtts(dir.path(), &["pca", "--checkpoint", ck.to_str().unwrap()], &[]));
    let pca = std::fs::read_to_string(dir.path().join("pca.csv")).unwrap();
    assert_eq!(pca.lines().next(), Some("speaker_id,pc1,pc2"));
    assert_eq!(pca.lines().count(), 5);

    let sentences = dir.path().join("sentences.txt");
    std::fs::write(&sentences, "# toy alphabet only\nabc.\n\nhead. \n").unwrap();
    ok(&convtts(
        dir.path(),
        &["diagnose", "--checkpoint", ck.to_str().unwrap(), "--sentences", sentences.to_str().unwrap(), "--speaker", "2"],
        &[("CONVTTS_MAX_STEPS_FACTOR", "0.5")],
    ));
    let diag = std::fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 2);
}

#[test]
fn rejected_preconditions_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ckpt");
    let out = convtts(dir.path(), &["synth", "--checkpoint", missing.to_str().unwrap(), "--text", "a."], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    ok(&convtts(dir.path(), &["train", "--steps", "1"], &[]));
    let ck = dir.path().join("checkpoint.ckpt");
    // Single-speaker models have no embeddings to analyse.
    assert!(!convtts(dir.path(), &["pca", "--checkpoint", ck.to_str().unwrap()], &[]).status.success());
    // Letters outside the toy alphabet.
    let out = convtts(dir.path(), &["synth", "--checkpoint", ck.to_str().unwrap(), "--text", "xyz."], &[]);
    assert!(!out.status.success());
    let out = convtts(dir.path(), &["train", "--steps", "1"], &[("CONVTTS_REDUCTION_FACTOR_R", "0")]);
    assert!(!out.status.success());
    let out = convtts(dir.path(), &["bench", "--constraint", "maybe"], &[]);
    assert!(!out.status.success());
}
