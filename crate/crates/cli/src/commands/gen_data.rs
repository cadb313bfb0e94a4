//! `gen-data`: materialize a synthetic corpus into a directory.

use std::fs;
use std::path::Path;

use wstan_core::error::Result;
use wstan_core::synth::{gen_corpus, save_corpus};

use super::{FINGERPRINT_FILE, TEST_FILE, TRAIN_FILE};
use crate::config::RunConfig;

/// Writes `train.jsonl`, `test.jsonl`, and the fingerprint file into
/// `out_dir`. The directory must already exist.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let (train, test) = gen_corpus(&cfg.corpus_config(), cfg.data_seed)?;
    save_corpus(&train, &out_dir.join(TRAIN_FILE))?;
    save_corpus(&test, &out_dir.join(TEST_FILE))?;
    fs::write(out_dir.join(FINGERPRINT_FILE), format!("{}\n", cfg.fingerprint()))?;
    println!(
        "wrote {} train / {} test episodes to {} (fingerprint {})",
        train.len(),
        test.len(),
        out_dir.display(),
        cfg.fingerprint()
    );
    Ok(())
}
