//! Static audit: ground-truth spans exist for evaluation only. Training,
//! model, and loss code must never read them — weak supervision means the
//! learner sees video-paragraph matching labels and nothing else. The test
//! walks every source file in the workspace and fails if `gt_spans` shows up
//! anywhere outside the generator that owns the field and the eval path that
//! scores against it.

use std::fs;
use std::path::{Path, PathBuf};

/// Source files allowed to mention `gt_spans`, relative to `crates/`.
const ALLOWED: &[&str] = &[
    // The field's home: definition, generation, and episode validation.
    "core/src/synth.rs",
    // The eval kit: metrics need the answer key.
    "cli/src/commands/eval.rs",
];

fn rust_sources(dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in fs::read_dir(dir).expect("source dir should be readable") {
        let path = entry.expect("dir entry").path();
        if path.is_dir() {
            rust_sources(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

#[test]
fn ground_truth_spans_are_read_only_by_the_eval_path() {
    let crates_dir = Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap().to_path_buf();
    let mut sources = Vec::new();
    rust_sources(&crates_dir.join("core").join("src"), &mut sources);
    rust_sources(&crates_dir.join("cli").join("src"), &mut sources);
    sources.sort();
    assert!(sources.len() >= 10, "audit walked too few files — wrong root?");

    let mut audit = Vec::new();
    let mut violations = Vec::new();
    for path in &sources {
        let text = fs::read_to_string(path).unwrap();
        let rel = path.strip_prefix(&crates_dir).unwrap().to_string_lossy().replace('\\', "/");
        for (idx, line) in text.lines().enumerate() {
            if line.contains("gt_spans") {
                audit.push(format!("{rel}:{} {}", idx + 1, line.trim()));
                if !ALLOWED.contains(&rel.as_str()) {
                    violations.push(format!("{rel}:{}", idx + 1));
                }
            }
        }
    }

    println!("gt_spans readers ({} sites):", audit.len());
    for site in &audit {
        println!("  {site}");
    }
    assert!(
        !audit.is_empty(),
        "audit found no gt_spans sites at all — field renamed? update the audit"
    );
    assert!(
        violations.is_empty(),
        "gt_spans referenced outside the generator and eval path: {violations:?}"
    );
}
