//! Inference post-processing and evaluation protocols: moment ranking,
//! temporal non-maximum suppression, R@k at IoU thresholds, mean IoU, and
//! the fixed-candidate rank protocol for 6-clip grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::iou;
use crate::moment::moment_to_span;
use crate::scalar::Scalar;

/// One candidate span in seconds with its score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: (f64, f64),
    pub score: f64,
}

/// Candidate list ordered by score descending. Construction validates the
/// ordering and every span, so consumers can rely on both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPrediction {
    spans: Vec<ScoredSpan>,
}

impl RankedPrediction {
    pub fn new(spans: Vec<ScoredSpan>) -> Result<Self> {
        if spans.is_empty() {
            return Err(Error::Metric("a prediction needs at least one span".into()));
        }
        for entry in &spans {
            let (s, e) = entry.span;
            if !(s < e) || !s.is_finite() || !e.is_finite() {
                return Err(Error::Interval(format!("[{s}, {e}] is not a proper span")));
            }
            if !entry.score.is_finite() {
                return Err(Error::Metric(format!("score {} is not finite", entry.score)));
            }
        }
        if spans.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::Metric("prediction scores must be non-increasing".into()));
        }
        Ok(RankedPrediction { spans })
    }

    pub fn spans(&self) -> &[ScoredSpan] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn top(&self) -> &ScoredSpan {
        &self.spans[0]
    }
}

/// Converts a score map into a ranked span list: every valid cell becomes a
/// second-span, sorted by score descending with ties broken toward the
/// lowest (i, j) lexicographically.
pub fn rank_moments<S: Scalar>(
    map_values: &[S],
    n: usize,
    duration: f64,
) -> Result<RankedPrediction> {
    if n == 0 || map_values.len() != n * n {
        return Err(Error::dim(
            "rank_moments",
            format!("{} values do not form an {n} x {n} grid", map_values.len()),
        ));
    }
    let mut entries: Vec<((usize, usize), ScoredSpan)> = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let score = map_values[i * n + j].to_f64_lossy();
            if !score.is_finite() {
                return Err(Error::Metric(format!("score at ({i}, {j}) is not finite")));
            }
            let span = moment_to_span(i, j, n, duration)?;
            entries.push(((i, j), ScoredSpan { span, score }));
        }
    }
    entries.sort_by(|a, b| {
        b.1.score
            .partial_cmp(&a.1.score)
            .expect("scores validated finite")
            .then(a.0.cmp(&b.0))
    });
    RankedPrediction::new(entries.into_iter().map(|(_, s)| s).collect())
}

/// Greedy temporal non-maximum suppression: repeatedly keep the best-scored
/// remaining span and discard everything overlapping it above the threshold.
pub fn nms(pred: &RankedPrediction, iou_thresh: f64) -> Result<RankedPrediction> {
    if !(0.0..=1.0).contains(&iou_thresh) {
        return Err(Error::pre("nms", format!("threshold {iou_thresh} outside [0, 1]")));
    }
    let mut kept: Vec<ScoredSpan> = Vec::new();
    for candidate in pred.spans() {
        let mut suppressed = false;
        for keeper in &kept {
            if iou(candidate.span, keeper.span)? > iou_thresh {
                suppressed = true;
                break;
            }
        }
        if !suppressed {
            kept.push(*candidate);
        }
    }
    RankedPrediction::new(kept)
}

/// Percentage of samples whose top-`k` spans contain at least one span with
/// IoU ≥ `iou_thresh` against the ground truth.
pub fn recall_at_k(
    samples: &[(RankedPrediction, (f64, f64))],
    k: usize,
    iou_thresh: f64,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::pre("recall_at_k", "k must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::Metric("recall over an empty sample list is undefined".into()));
    }
    let mut hits = 0usize;
    for (pred, gt) in samples {
        let hit = pred
            .spans()
            .iter()
            .take(k)
            .map(|s| iou(s.span, *gt))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .any(|o| o >= iou_thresh);
        if hit {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / samples.len() as f64)
}

/// Indices of the three annotations with the largest pairwise IoU sum; with
/// three or fewer annotations, all of them. Subsets are enumerated in
/// lexicographic order and ties keep the first.
pub fn best_matched_three(annotations: &[(f64, f64)]) -> Result<Vec<usize>> {
    if annotations.is_empty() {
        return Err(Error::Metric("no annotations".into()));
    }
    if annotations.len() <= 3 {
        return Ok((0..annotations.len()).collect());
    }
    let mut best: Option<([usize; 3], f64)> = None;
    for a in 0..annotations.len() {
        for b in a + 1..annotations.len() {
            for c in b + 1..annotations.len() {
                let agreement = iou(annotations[a], annotations[b])?
                    + iou(annotations[a], annotations[c])?
                    + iou(annotations[b], annotations[c])?;
                if best.map_or(true, |(_, bv)| agreement > bv) {
                    best = Some(([a, b, c], agreement));
                }
            }
        }
    }
    let (subset, _) = best.expect("len > 3 yields at least one subset");
    Ok(subset.to_vec())
}

/// Mean over samples of the top-1 span's IoU with ground truth, ×100. For
/// multi-annotator samples the IoU is averaged over the best-matched three
/// annotations.
pub fn mean_iou(samples: &[(RankedPrediction, Vec<(f64, f64)>)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Metric("mean IoU over an empty sample list is undefined".into()));
    }
    let mut total = 0.0;
    for (pred, annotations) in samples {
        let selected = best_matched_three(annotations)?;
        let mut sample_iou = 0.0;
        for idx in &selected {
            sample_iou += iou(pred.top().span, annotations[*idx])?;
        }
        total += sample_iou / selected.len() as f64;
    }
    Ok(100.0 * total / samples.len() as f64)
}

/// Outcome of the fixed-candidate rank protocol for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOutcome {
    pub hit: bool,
    pub mean_rank: f64,
    /// Number of annotations actually used (3, or fewer when fewer exist).
    pub used: usize,
}

/// Number of clips in the fixed-candidate grid.
pub const RANK_PROTOCOL_CLIPS: usize = 6;

/// Rank protocol over the 21 fixed segment combinations of a 6-clip video:
/// each best-matched annotation's 1-based rank is found by exact span
/// match, and the sample is a hit when the mean rank is ≤ `k`.
pub fn didemo_rank_at_k(
    pred: &RankedPrediction,
    annotations: &[(f64, f64)],
    duration: f64,
    k: usize,
) -> Result<RankOutcome> {
    if k == 0 {
        return Err(Error::pre("didemo_rank_at_k", "k must be at least 1"));
    }
    let n = RANK_PROTOCOL_CLIPS;
    let expected = n * (n + 1) / 2;
    if pred.len() != expected {
        return Err(Error::Protocol(format!(
            "rank protocol needs exactly {expected} candidates, got {}",
            pred.len()
        )));
    }
    for i in 0..n {
        for j in i..n {
            let span = moment_to_span(i, j, n, duration)?;
            if !pred.spans().iter().any(|s| s.span == span) {
                return Err(Error::Protocol(format!(
                    "candidate list is missing the segment combination ({i}, {j})"
                )));
            }
        }
    }
    if annotations.is_empty() {
        return Err(Error::Protocol("rank protocol needs at least one annotation".into()));
    }
    let selected = best_matched_three(annotations)?;
    let mut rank_sum = 0.0;
    for idx in &selected {
        let span = annotations[*idx];
        let rank = pred
            .spans()
            .iter()
            .position(|s| s.span == span)
            .ok_or_else(|| {
                Error::Protocol(format!(
                    "annotation [{}, {}] is not one of the {expected} candidates",
                    span.0, span.1
                ))
            })?;
        rank_sum += (rank + 1) as f64;
    }
    let mean_rank = rank_sum / selected.len() as f64;
    Ok(RankOutcome { hit: mean_rank <= k as f64, mean_rank, used: selected.len() })
}

/// One row of the metrics table. Rows where `k` or `iou` do not apply
/// (mean IoU, rank protocol) carry 0 in those columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: usize,
    pub iou: f64,
    pub value: f64,
}

/// Full evaluation result: the metric table plus run metadata. The CSV
/// rendering is deterministic so identical runs produce identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub samples: usize,
    pub rows: Vec<MetricRow>,
}

impl MetricsReport {
    pub fn new(fingerprint: &str, samples: usize) -> Self {
        MetricsReport { fingerprint: fingerprint.to_string(), samples, rows: Vec::new() }
    }

    pub fn push(&mut self, metric: &str, k: usize, iou: f64, value: f64) {
        self.rows.push(MetricRow { metric: metric.to_string(), k, iou, value });
    }

    pub fn get(&self, metric: &str, k: usize, iou: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.k == k && r.iou == iou)
            .map(|r| r.value)
    }

    /// Every percentage must be a valid percentage, and recall at k=5 must
    /// dominate recall at k=1 at the same threshold.
    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if !(0.0..=100.0).contains(&row.value) {
                return Err(Error::Metric(format!(
                    "{} at k={}, iou={} is {}, outside [0, 100]",
                    row.metric, row.k, row.iou, row.value
                )));
            }
        }
        for row in &self.rows {
            if row.metric == "recall" && row.k == 5 {
                if let Some(r1) = self.get("recall", 1, row.iou) {
                    if row.value < r1 {
                        return Err(Error::Metric(format!(
                            "recall@5 ({}) below recall@1 ({}) at iou={}",
                            row.value, r1, row.iou
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# fingerprint={} samples={}\n", self.fingerprint, self.samples));
        out.push_str("metric,k,iou,value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.2},{:.4}\n",
                row.metric, row.k, row.iou, row.value
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Metric(format!("report serialization: {e}")))
    }
}
