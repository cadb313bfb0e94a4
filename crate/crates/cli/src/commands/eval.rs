//! `eval`: run every (episode, sentence) query through the trained model,
//! post-process with NMS, and score against the held-out spans. Queries
//! are independent, so they fan out over a worker pool and are collected
//! back in order — results are identical for any worker count.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use wstan_core::autodiff::Tape;
use wstan_core::checkpoint;
use wstan_core::error::{Error, Result};
use wstan_core::eval::{
    didemo_rank_at_k, mean_iou, nms, rank_moments, recall_at_k, MetricsReport, RankedPrediction,
    RANK_PROTOCOL_CLIPS,
};
use wstan_core::moment::moment_to_span;
use wstan_core::synth::Episode;
use wstan_core::text::{tokenize, Vocabulary};
use wstan_core::{Model, ParamSet, Real};

use super::{check_corpus_fingerprint, load_split, vocab_sidecar, TEST_FILE};
use crate::config::{substream, RunConfig};

/// Recall is reported at these (k, IoU threshold) grid points.
pub const RECALL_KS: [usize; 2] = [1, 5];
pub const RECALL_IOUS: [f64; 3] = [0.3, 0.5, 0.7];
/// Monte Carlo repetitions behind the random baseline.
pub const BASELINE_SEEDS: u64 = 10;

/// One query's outcome: the full ranking (for rank protocols), the
/// post-NMS ranking (for recall), and the ground truth in seconds.
struct QueryResult {
    episode_id: u64,
    sentence: usize,
    ranked: RankedPrediction,
    kept: RankedPrediction,
    gt: (f64, f64),
    annotations: Vec<(f64, f64)>,
    duration: f64,
}

pub fn run(
    cfg: &RunConfig,
    ckpt_path: &Path,
    corpus_dir: &Path,
    out_dir: &Path,
    workers: usize,
    vocab_override: Option<&Path>,
) -> Result<MetricsReport> {
    check_corpus_fingerprint(cfg, corpus_dir)?;
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

    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Model::init(cfg.model_config()?, vocab.len(), &mut params, &mut rng)?;
    ckpt.apply_to(&mut params)?;

    let episodes = load_split(cfg, corpus_dir, TEST_FILE)?;
    let queries = query_list(&episodes)?;

    let results = in_pool(workers, || {
        queries
            .par_iter()
            .map(|q| {
                let scores = model_scores(&model, &params, &vocab, q)?;
                postprocess(cfg, q, &scores)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let report = build_report(cfg, &results)?;
    write_outputs(cfg, out_dir, &results, &report)?;
    print_summary(&report);
    Ok(report)
}

/// Uniform random scores pushed through the identical post-processing and
/// metric path, averaged over a fixed number of seeds.
pub fn run_random_baseline(
    cfg: &RunConfig,
    corpus_dir: &Path,
    out_dir: &Path,
    workers: usize,
) -> Result<MetricsReport> {
    check_corpus_fingerprint(cfg, corpus_dir)?;
    let episodes = load_split(cfg, corpus_dir, TEST_FILE)?;
    let queries = query_list(&episodes)?;

    let mut reports = Vec::new();
    for i in 0..BASELINE_SEEDS {
        // Scores are drawn sequentially in query order so the draw stream
        // is independent of the worker count.
        let mut rng = ChaCha8Rng::seed_from_u64(substream(cfg.eval_seed, 100 + i));
        let score_sets: Vec<Vec<Real>> = queries
            .iter()
            .map(|_| (0..cfg.n * cfg.n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let results = in_pool(workers, || {
            queries
                .par_iter()
                .zip(&score_sets)
                .map(|(q, scores)| postprocess(cfg, q, scores))
                .collect::<Result<Vec<_>>>()
        })?;
        reports.push(build_report(cfg, &results)?);
    }

    let averaged = average_reports(&reports)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.csv"), averaged.to_csv())?;
    fs::write(out_dir.join("metrics.json"), averaged.to_json()?)?;
    print_summary(&averaged);
    Ok(averaged)
}

/// A query is one sentence of one episode, with the episode's clip
/// features and ground truth attached.
struct Query {
    episode_id: u64,
    sentence: usize,
    tokens_source: String,
    clips: Vec<Real>,
    d_v: usize,
    gt_clip: (usize, usize),
    duration: f64,
    n: usize,
    annotations: Vec<(usize, usize)>,
}

fn query_list(episodes: &[Episode]) -> Result<Vec<Query>> {
    if episodes.is_empty() {
        return Err(Error::Metric("evaluation over an empty corpus is undefined".into()));
    }
    let mut queries = Vec::new();
    for ep in episodes {
        let flat: Vec<Real> = ep.clips.iter().flatten().copied().collect();
        let d_v = ep.clips[0].len();
        for (k, sentence) in ep.sentences.iter().enumerate() {
            queries.push(Query {
                episode_id: ep.id,
                sentence: k,
                tokens_source: sentence.clone(),
                clips: flat.clone(),
                d_v,
                gt_clip: ep.gt_spans[k],
                duration: ep.duration,
                n: ep.n(),
                annotations: ep.gt_spans.clone(),
            });
        }
    }
    Ok(queries)
}

fn in_pool<T: Send>(workers: usize, job: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool construction cannot fail for a sane thread count");
    pool.install(job)
}

/// Forward pass for one sentence; returns the final head's score map
/// (complementary branch when enabled, otherwise the matching map).
fn model_scores(
    model: &Model,
    params: &ParamSet,
    vocab: &Vocabulary,
    q: &Query,
) -> Result<Vec<Real>> {
    let tokens = tokenize(&q.tokens_source, vocab)?;
    let mut tape = Tape::new();
    let clips = wstan_core::moment::ClipFeatures::from_values(q.n, q.d_v, q.clips.clone())?;
    let out = model.forward(&mut tape, params, &clips, &[tokens])?;
    let map = match &out.cb_maps {
        Some(maps) => maps[0],
        None => out.match_maps[0],
    };
    Ok(tape.values(map).to_vec())
}

fn postprocess(cfg: &RunConfig, q: &Query, scores: &[Real]) -> Result<QueryResult> {
    let ranked = rank_moments(scores, q.n, q.duration)?;
    let kept = nms(&ranked, cfg.nms_threshold)?;
    let gt = moment_to_span(q.gt_clip.0, q.gt_clip.1, q.n, q.duration)?;
    let annotations = q
        .annotations
        .iter()
        .map(|(i, j)| moment_to_span(*i, *j, q.n, q.duration))
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryResult {
        episode_id: q.episode_id,
        sentence: q.sentence,
        ranked,
        kept,
        gt,
        annotations,
        duration: q.duration,
    })
}

fn build_report(cfg: &RunConfig, results: &[QueryResult]) -> Result<MetricsReport> {
    let recall_samples: Vec<(RankedPrediction, (f64, f64))> =
        results.iter().map(|r| (r.kept.clone(), r.gt)).collect();
    let miou_samples: Vec<(RankedPrediction, Vec<(f64, f64)>)> =
        results.iter().map(|r| (r.kept.clone(), vec![r.gt])).collect();

    let mut report = MetricsReport::new(&cfg.fingerprint(), results.len());
    for &iou in &RECALL_IOUS {
        for &k in &RECALL_KS {
            report.push("recall", k, iou, recall_at_k(&recall_samples, k, iou)?);
        }
    }
    report.push("miou", 0, 0.0, mean_iou(&miou_samples)?);

    // The rank protocol only exists on the six-clip candidate grid.
    if cfg.n == RANK_PROTOCOL_CLIPS {
        let mut short = 0usize;
        for &k in &RECALL_KS {
            let mut hits = 0usize;
            for r in results {
                let outcome = didemo_rank_at_k(&r.ranked, &r.annotations, r.duration, k)?;
                hits += usize::from(outcome.hit);
                if k == RECALL_KS[0] && outcome.used < 3 {
                    short += 1;
                }
            }
            report.push("rank", k, 0.0, 100.0 * hits as f64 / results.len() as f64);
        }
        report.push("rank_annotations_below3", 0, 0.0, 100.0 * short as f64 / results.len() as f64);
    }
    report.validate()?;
    Ok(report)
}

fn average_reports(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports.first().ok_or_else(|| Error::Metric("no reports to average".into()))?;
    let mut averaged = MetricsReport::new(&first.fingerprint, first.samples);
    for (row_idx, row) in first.rows.iter().enumerate() {
        let mut sum = 0.0;
        for r in reports {
            let other = &r.rows[row_idx];
            if other.metric != row.metric || other.k != row.k || other.iou != row.iou {
                return Err(Error::Metric("reports disagree on row layout".into()));
            }
            sum += other.value;
        }
        averaged.push(&row.metric, row.k, row.iou, sum / reports.len() as f64);
    }
    averaged.validate()?;
    Ok(averaged)
}

fn write_outputs(
    cfg: &RunConfig,
    out_dir: &Path,
    results: &[QueryResult],
    report: &MetricsReport,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.csv"), report.to_csv())?;
    fs::write(out_dir.join("metrics.json"), report.to_json()?)?;

    let mut predictions = String::new();
    for r in results {
        let spans: Vec<serde_json::Value> = r
            .kept
            .spans()
            .iter()
            .map(|s| serde_json::json!({ "span": [s.span.0, s.span.1], "score": s.score }))
            .collect();
        let record = serde_json::json!({
            "episode": r.episode_id,
            "sentence": r.sentence,
            "fingerprint": cfg.fingerprint(),
            "spans": spans,
        });
        predictions.push_str(&record.to_string());
        predictions.push('\n');
    }
    fs::write(out_dir.join("predictions.jsonl"), predictions)?;
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    for row in &report.rows {
        println!("{},{},{:.2},{:.4}", row.metric, row.k, row.iou, row.value);
    }
}
