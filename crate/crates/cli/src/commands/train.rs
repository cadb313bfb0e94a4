//! `train`: the weakly supervised training loop. One gradient window per
//! `batch_size` consecutive pairs; each pair's loss is pre-scaled by the
//! window length so accumulated gradients are exact window means.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wstan_core::autodiff::Tape;
use wstan_core::checkpoint;
use wstan_core::error::{Error, Result};
use wstan_core::losses::{
    cb_loss, cb_sd_loss, mil_loss, sd_loss, total_loss, LossTerms,
};
use wstan_core::model::matching_score;
use wstan_core::synth::{build_vocabulary, make_training_pair};
use wstan_core::text::tokenize;
use wstan_core::{Adam, Model, ParamSet, Real};

use super::{check_corpus_fingerprint, load_split, vocab_sidecar, TRAIN_FILE};
use crate::config::{substream, RunConfig};

/// What a finished run produced, for callers that keep going (tests,
/// ablation sweeps).
#[derive(Debug)]
pub struct TrainSummary {
    pub steps: u64,
    /// Mean MIL loss per epoch, in epoch order.
    pub epoch_mil: Vec<f64>,
    pub ckpt_path: PathBuf,
    pub log_path: PathBuf,
}

/// Loss values of one step, already read back from the tape.
struct StepValues {
    mil: f64,
    sd: Option<f64>,
    cb: Option<f64>,
    cb_sd: Option<f64>,
    total: f64,
}

pub fn run(
    cfg: &RunConfig,
    corpus_dir: &Path,
    ckpt_out: &Path,
    log_out: Option<&Path>,
) -> Result<TrainSummary> {
    check_corpus_fingerprint(cfg, corpus_dir)?;
    let episodes = load_split(cfg, corpus_dir, TRAIN_FILE)?;
    if episodes.len() < 2 {
        return Err(Error::Sampling(format!(
            "training needs at least two episodes for negative sampling, corpus has {}",
            episodes.len()
        )));
    }

    let vocab = build_vocabulary(&episodes);
    let th = cfg.thresholds()?;
    let weights = cfg.weights()?;
    let mut params = ParamSet::new();
    let mut init_rng = ChaCha8Rng::seed_from_u64(substream(cfg.train_seed, 1));
    let model = Model::init(cfg.model_config()?, vocab.len(), &mut params, &mut init_rng)?;
    let mut pair_rng = ChaCha8Rng::seed_from_u64(substream(cfg.train_seed, 2));
    let mut adam = Adam::new(cfg.lr)?;

    let mut log = String::new();
    let _ = writeln!(log, "# fingerprint={}", cfg.fingerprint());
    let _ = writeln!(log, "epoch,step,L_mil,L_sd,L_cb,L_cbsd,total,y_m");

    let pairs_per_epoch = episodes.len();
    let mut step: u64 = 0;
    let mut epoch_mil = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut mil_sum = 0.0;
        for pos in 0..pairs_per_epoch {
            // Windows never cross an epoch boundary; the last one of an
            // epoch may be short.
            let window_base = pos - pos % cfg.batch_size;
            let window_len = cfg.batch_size.min(pairs_per_epoch - window_base);

            let pair = make_training_pair(&episodes, pos, &mut pair_rng)?;
            step += 1;

            let values = train_step(
                cfg, &model, &mut params, &episodes[pair.video_index].clip_features()?,
                &pair.paragraph, pair.y_m, th, weights, &vocab, window_len,
            )
            .map_err(|e| at_step(e, step))?;

            mil_sum += values.mil;
            let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = writeln!(
                log,
                "{epoch},{step},{:.6},{},{},{},{:.6},{}",
                values.mil,
                fmt(values.sd),
                fmt(values.cb),
                fmt(values.cb_sd),
                values.total,
                u8::from(pair.y_m),
            );

            let window_end = (pos + 1) % cfg.batch_size == 0 || pos + 1 == pairs_per_epoch;
            if window_end {
                adam.step(&mut params).map_err(|e| at_step(e, step))?;
                params.zero_grads();
            }
        }
        epoch_mil.push(mil_sum / pairs_per_epoch as f64);
    }

    checkpoint::save_to_path(ckpt_out, &cfg.fingerprint(), &params)?;
    vocab.save(&vocab_sidecar(ckpt_out))?;
    let log_path = match log_out {
        Some(p) => p.to_path_buf(),
        None => ckpt_out.with_extension("log.csv"),
    };
    fs::write(&log_path, log)?;

    println!(
        "trained {} epochs ({} steps); mean MIL {:.4} -> {:.4}; checkpoint {}",
        cfg.epochs,
        step,
        epoch_mil.first().copied().unwrap_or(f64::NAN),
        epoch_mil.last().copied().unwrap_or(f64::NAN),
        ckpt_out.display()
    );
    Ok(TrainSummary { steps: step, epoch_mil, ckpt_path: ckpt_out.to_path_buf(), log_path })
}

/// Forward, loss assembly, and gradient accumulation for one pair.
/// Returns the unscaled loss values; the backward pass sees the loss
/// scaled by `1 / window_len`.
#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &RunConfig,
    model: &Model,
    params: &mut ParamSet,
    clips: &wstan_core::moment::ClipFeatures<Real>,
    paragraph: &[String],
    y_m: bool,
    th: wstan_core::losses::Thresholds,
    weights: wstan_core::losses::LossWeights,
    vocab: &wstan_core::text::Vocabulary,
    window_len: usize,
) -> Result<StepValues> {
    let sentences: Vec<Vec<usize>> =
        paragraph.iter().map(|s| tokenize(s, vocab)).collect::<Result<_>>()?;

    let mut tape = Tape::new();
    let out = model.forward(&mut tape, params, clips, &sentences)?;
    let score = matching_score(&mut tape, &out.match_maps, model.mask())?;
    let mut terms = LossTerms {
        mil: mil_loss(&mut tape, score.p, y_m)?,
        sd: None,
        cb: None,
        cb_sd: None,
    };
    if y_m {
        if cfg.sd_mil {
            terms.sd = Some(sd_loss(&mut tape, &out.match_maps, cfg.n, th, model.mask())?);
        }
        if cfg.cb {
            let cb_maps = out.cb_maps.as_ref().ok_or_else(|| {
                Error::contract("train", "complementary branch enabled but produced no maps")
            })?;
            terms.cb =
                Some(cb_loss(&mut tape, &out.match_maps, cb_maps, cfg.n, th, model.mask())?);
            if cfg.sd_cb {
                terms.cb_sd = Some(cb_sd_loss(&mut tape, cb_maps, cfg.n, th, model.mask())?);
            }
        }
    }
    let total = total_loss(&mut tape, terms, weights, y_m)?;

    let read = |v| tape.values(v)[0];
    let values = StepValues {
        mil: read(terms.mil),
        sd: terms.sd.map(read),
        cb: terms.cb.map(read),
        cb_sd: terms.cb_sd.map(read),
        total: read(total),
    };
    for (component, v) in [
        ("mil", Some(values.mil)),
        ("sd", values.sd),
        ("cb", values.cb),
        ("cb_sd", values.cb_sd),
        ("total", Some(values.total)),
    ] {
        if let Some(v) = v {
            if !v.is_finite() {
                return Err(Error::numeric("train", format!("{component} loss is {v}")));
            }
        }
    }

    let objective = if window_len > 1 {
        tape.scale(total, 1.0 / window_len as f64)?
    } else {
        total
    };
    tape.backward(objective)?;
    tape.accumulate_grads_into(params)?;
    Ok(values)
}

/// Stamp the failing step onto numeric errors so aborted runs say where
/// and in which component they died.
fn at_step(e: Error, step: u64) -> Error {
    match e {
        Error::Numeric { op, detail } => {
            Error::Numeric { op: format!("step {step}: {op}"), detail }
        }
        other => other,
    }
}
