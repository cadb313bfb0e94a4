//! `infer`: ground one sentence in one video and print the best span,
//! optionally dumping the score map as a plain-text PGM heatmap.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wstan_core::autodiff::Tape;
use wstan_core::checkpoint;
use wstan_core::error::{Error, Result};
use wstan_core::eval::rank_moments;
use wstan_core::synth::load_corpus;
use wstan_core::text::{tokenize, Vocabulary};
use wstan_core::{Model, ParamSet, Real};

use super::vocab_sidecar;
use crate::config::RunConfig;

/// The grounded span and its score, as printed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grounding {
    pub span: (f64, f64),
    pub score: f64,
}

pub fn run(
    cfg: &RunConfig,
    ckpt_path: &Path,
    video: &Path,
    sentence: &str,
    heatmap: Option<&Path>,
    vocab_override: Option<&Path>,
) -> Result<Grounding> {
    let ckpt = checkpoint::load_from_path::<Real>(ckpt_path)?;
    let expected = cfg.fingerprint();
    if ckpt.fingerprint != expected {
        return Err(Error::Compatibility(format!(
            "checkpoint {} carries fingerprint {}, configuration resolves to {expected}",
            ckpt_path.display(),
            ckpt.fingerprint
        )));
    }
    let vocab_path = match vocab_override {
        Some(p) => p.to_path_buf(),
        None => vocab_sidecar(ckpt_path),
    };
    let vocab = Vocabulary::load(&vocab_path)?;
    let tokens = tokenize(sentence, &vocab)?;

    let episodes = load_corpus(video)?;
    let episode = episodes.first().ok_or_else(|| Error::Parse {
        line: 1,
        detail: format!("video file {} contains no episodes", video.display()),
    })?;
    if episode.n() != cfg.n {
        return Err(Error::Compatibility(format!(
            "episode {} has {} clips, configuration expects {}",
            episode.id,
            episode.n(),
            cfg.n
        )));
    }

    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::init(cfg.model_config()?, vocab.len(), &mut params, &mut rng)?;
    ckpt.apply_to(&mut params)?;

    let mut tape = Tape::new();
    let out = model.forward(&mut tape, &params, &episode.clip_features()?, &[tokens])?;
    let map = match &out.cb_maps {
        Some(maps) => maps[0],
        None => out.match_maps[0],
    };
    let scores = tape.values(map);

    let ranked = rank_moments(scores, cfg.n, episode.duration)?;
    let top = ranked.top();
    println!("[{:.2}, {:.2}] {:.4}", top.span.0, top.span.1, top.score);

    if let Some(path) = heatmap {
        fs::write(path, render_pgm(scores, cfg.n))?;
    }
    Ok(Grounding { span: top.span, score: top.score })
}

/// Plain-text PGM (P2): scores scaled to 0-255, row = start clip,
/// column = end clip, invalid lower triangle black.
fn render_pgm(scores: &[Real], n: usize) -> String {
    let mut out = format!("P2\n{n} {n}\n255\n");
    for i in 0..n {
        let mut row = Vec::with_capacity(n);
        for j in 0..n {
            let level = if i <= j {
                (scores[i * n + j].clamp(0.0, 1.0) * 255.0).round() as u32
            } else {
                0
            };
            row.push(level.to_string());
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
