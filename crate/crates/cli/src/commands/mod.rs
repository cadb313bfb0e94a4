//! One module per subcommand, plus shared artifact helpers.

pub mod eval;
pub mod gen_data;
pub mod gradcheck;
pub mod infer;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use wstan_core::error::{Error, Result};
use wstan_core::synth::Episode;

use crate::config::RunConfig;

/// File names inside a corpus directory.
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const FINGERPRINT_FILE: &str = "fingerprint.txt";

/// The vocabulary sidecar written next to a checkpoint.
pub fn vocab_sidecar(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("vocab")
}

/// Reads a corpus directory's fingerprint and demands it match the
/// resolved configuration.
pub fn check_corpus_fingerprint(cfg: &RunConfig, corpus_dir: &Path) -> Result<()> {
    let path = corpus_dir.join(FINGERPRINT_FILE);
    let recorded = fs::read_to_string(&path)?.trim().to_string();
    let expected = cfg.fingerprint();
    if recorded != expected {
        return Err(Error::Compatibility(format!(
            "corpus {} was generated under fingerprint {recorded}, configuration resolves to {expected}",
            corpus_dir.display()
        )));
    }
    Ok(())
}

/// Loads one split and confirms its clip grid matches the configured N.
pub fn load_split(cfg: &RunConfig, corpus_dir: &Path, file: &str) -> Result<Vec<Episode>> {
    let episodes = wstan_core::synth::load_corpus(&corpus_dir.join(file))?;
    for ep in &episodes {
        if ep.n() != cfg.n {
            return Err(Error::Compatibility(format!(
                "episode {} has {} clips, configuration expects {}",
                ep.id,
                ep.n(),
                cfg.n
            )));
        }
    }
    Ok(episodes)
}
