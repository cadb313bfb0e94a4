//! End-to-end checks of the `wstan` binary: exit-code contract, artifact
//! determinism, fingerprint guardrails, and output formats. Every test runs
//! the real executable on a deliberately tiny corpus so the whole file
//! finishes in seconds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

/// Small enough to train in a fraction of a second, big enough to exercise
/// batching (batch_size 3 does not divide 12 pairs), multi-sentence
/// paragraphs, and a non-trivial moment grid.
const TINY_CFG: &str = "\
train_episodes = 12
test_episodes = 6
n = 8
d_v = 8
num_events = 8
min_span = 2
max_span = 3
sigma = 0.05
d_s = 8
d_f = 4
tan_layers = 1
epochs = 2
batch_size = 3
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wstan"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process should exit, not be signalled")
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Write the tiny config into `dir` and return its path.
fn tiny_cfg(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY_CFG).unwrap();
    path
}

/// Generate the tiny corpus into `dir/corpus` and return (cfg, corpus_dir).
fn gen_tiny(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = tiny_cfg(dir);
    let corpus = dir.join("corpus");
    fs::create_dir(&corpus).unwrap();
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", corpus.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "gen-data failed: {}", stderr_text(&out));
    (cfg, corpus)
}

/// Train on the tiny corpus and return the checkpoint path.
fn train_tiny(cfg: &Path, corpus: &Path, ckpt: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--ckpt-out",
        ckpt.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

// ── exit-code contract ──

#[test]
fn help_and_defaults_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["defaults"])), 0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["train", "--not_a_knob", "1"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unparseable_flag_value_is_a_usage_error() {
    let out = run(&["gen-data", "--alpha", "banana", "--out", "/tmp"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_config_file_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "learning_rate = 0.1\n").unwrap();
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stderr_text(&out).contains("unknown config key"));
}

#[test]
fn invalid_weight_sum_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_cfg(dir.path());
    let out = run(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--alpha",
        "0.9",
        "--beta",
        "0.9",
        "--gamma",
        "0.9",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_corpus_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_cfg(dir.path());
    let out = train_tiny(&cfg, dir.path(), &dir.path().join("m.ckpt"), &[]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr_text(&out));
}

#[test]
fn gen_data_refuses_a_missing_output_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_cfg(dir.path());
    let missing = dir.path().join("does").join("not").join("exist");
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn injected_gradcheck_fault_exits_three_and_names_the_fixture() {
    let out = run(&["gradcheck", "--inject-fault"]);
    assert_eq!(code(&out), 3);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fixture.broken"), "stdout: {stdout}");
    assert!(stdout.contains("FAIL"));
}

// ── determinism of produced artifacts ──

#[test]
fn gen_data_is_byte_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = tiny_cfg(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        fs::create_dir(out_dir).unwrap();
        let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0);
    }
    for name in ["train.jsonl", "test.jsonl", "fingerprint.txt"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs between identical runs");
    }
}

#[test]
fn training_twice_yields_identical_checkpoints_and_logs() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let (c1, c2) = (dir.path().join("one.ckpt"), dir.path().join("two.ckpt"));
    assert_eq!(code(&train_tiny(&cfg, &corpus, &c1, &[])), 0);
    assert_eq!(code(&train_tiny(&cfg, &corpus, &c2, &[])), 0);
    assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap(), "checkpoint bytes differ");
    assert_eq!(
        fs::read(c1.with_extension("log.csv")).unwrap(),
        fs::read(c2.with_extension("log.csv")).unwrap(),
        "training logs differ"
    );
    assert_eq!(
        fs::read(c1.with_extension("vocab")).unwrap(),
        fs::read(c2.with_extension("vocab")).unwrap(),
        "vocabulary sidecars differ"
    );
}

// ── fingerprint guardrails ──

#[test]
fn corpus_shape_mismatch_is_rejected_before_training() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let out = train_tiny(&cfg, &corpus, &dir.path().join("m.ckpt"), &["--sigma", "0.06"]);
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("fingerprint"), "stderr: {}", stderr_text(&out));
}

#[test]
fn checkpoint_from_other_architecture_is_rejected_at_eval() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(code(&train_tiny(&cfg, &corpus, &ckpt, &[])), 0);
    // Same corpus, but the eval config asks for a different trunk depth.
    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--tan_layers",
        "2",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out-dir",
        dir.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr_text(&out).contains("fingerprint"));
}

// ── evaluation output invariances ──

#[test]
fn eval_reports_do_not_depend_on_worker_count() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(code(&train_tiny(&cfg, &corpus, &ckpt, &[])), 0);
    let mut outputs = Vec::new();
    for workers in ["1", "4"] {
        let out_dir = dir.path().join(format!("ev{workers}"));
        let out = run(&[
            "eval",
            "--config",
            cfg.to_str().unwrap(),
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert_eq!(code(&out), 0, "eval failed: {}", stderr_text(&out));
        outputs.push((
            fs::read(out_dir.join("metrics.csv")).unwrap(),
            fs::read(out_dir.join("predictions.jsonl")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1], "worker count changed eval artifacts");
}

#[test]
fn random_baseline_needs_no_checkpoint_but_eval_does() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out-dir",
        dir.path().join("rb").to_str().unwrap(),
        "--random-baseline",
    ]);
    assert_eq!(code(&out), 0, "baseline failed: {}", stderr_text(&out));
    let out = run(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--corpus",
        corpus.to_str().unwrap(),
        "--out-dir",
        dir.path().join("ev").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1, "eval without a checkpoint should be a usage error");
}

// ── inference ──

#[test]
fn infer_prints_a_span_and_writes_a_valid_heatmap() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(code(&train_tiny(&cfg, &corpus, &ckpt, &[])), 0);
    let pgm = dir.path().join("map.pgm");
    let out = run(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--video",
        corpus.join("test.jsonl").to_str().unwrap(),
        "--sentence",
        "person opens the door quickly",
        "--heatmap",
        pgm.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "infer failed: {}", stderr_text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains('[') && stdout.contains(']'), "no span in: {stdout}");

    let text = fs::read_to_string(&pgm).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("P2"));
    assert_eq!(lines.next(), Some("8 8"));
    assert_eq!(lines.next(), Some("255"));
    let rows: Vec<Vec<i64>> = lines
        .map(|l| l.split_whitespace().map(|t| t.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 8);
        for (j, &v) in row.iter().enumerate() {
            assert!((0..=255).contains(&v));
            if j < i {
                assert_eq!(v, 0, "lower triangle must render black at ({i},{j})");
            }
        }
    }
}

#[test]
fn infer_with_a_blank_sentence_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let (cfg, corpus) = gen_tiny(dir.path());
    let ckpt = dir.path().join("m.ckpt");
    assert_eq!(code(&train_tiny(&cfg, &corpus, &ckpt, &[])), 0);
    let out = run(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--video",
        corpus.join("test.jsonl").to_str().unwrap(),
        "--sentence",
        "   ",
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr_text(&out));
}

// ── self-documenting defaults ──

#[test]
fn defaults_output_round_trips_as_a_config_file() {
    let printed = run(&["defaults"]);
    assert_eq!(code(&printed), 0);
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("defaults.cfg");
    fs::write(&cfg, &printed.stdout).unwrap();

    // Feeding the printed defaults back in must be a no-op: same corpus
    // fingerprint as a run with no config file at all.
    let (plain, via_file) = (dir.path().join("plain"), dir.path().join("via_file"));
    fs::create_dir(&plain).unwrap();
    fs::create_dir(&via_file).unwrap();
    let out = run(&["gen-data", "--out", plain.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let out = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", via_file.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "printed defaults did not parse back: {}", stderr_text(&out));
    assert_eq!(
        fs::read(plain.join("fingerprint.txt")).unwrap(),
        fs::read(via_file.join("fingerprint.txt")).unwrap(),
        "defaults should be a fixed point of themselves"
    );
}
