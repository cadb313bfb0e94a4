//! Training objectives: the video-level matching loss, truncated soft
//! pseudo-labels with their confidence weights, the self-discriminating and
//! complementary objectives built on them, and the gated weighted total.

use crate::autodiff::{Mask, Tape, Var};
use crate::error::{Error, Result};
use crate::moment::{moment_to_span, valid_moment_count};
use crate::scalar::Scalar;

/// Probabilities are clamped into `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-7;

/// Truncation thresholds for soft pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub o_min: f64,
    pub o_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { o_min: 0.9, o_max: 1.0 }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.o_min)
            || !(0.0..=1.0).contains(&self.o_max)
            || !(self.o_min < self.o_max)
        {
            return Err(Error::Config(format!(
                "thresholds ({}, {}) must satisfy 0 <= o_min < o_max <= 1",
                self.o_min, self.o_max
            )));
        }
        Ok(())
    }
}

/// Mixing weights for the loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 0.5, beta: 0.25, gamma: 0.25 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be nonnegative")));
            }
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "loss weights sum to {sum}, must sum to 1"
            )));
        }
        Ok(())
    }
}

/// Soft target map over the moment grid, plus its argmax cell. Values for
/// invalid cells are zero. Targets are plain numbers: label generation is
/// outside the differentiation tape by design.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelMap {
    n: usize,
    values: Vec<f64>,
    arg_i: usize,
    arg_j: usize,
}

impl PseudoLabelMap {
    /// Builds a label map from explicit per-cell targets, for callers that
    /// produce labels by other means (tooling, oracle tests). Invalid cells
    /// must hold zero; valid targets must lie in `[0, 1]`. The recorded
    /// argmax is the first valid cell with the largest target.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * n {
            return Err(Error::dim(
                "PseudoLabelMap::from_values",
                format!("{} values do not form an {n} x {n} grid", values.len()),
            ));
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            for j in 0..n {
                let v = values[i * n + j];
                if j < i {
                    if v != 0.0 {
                        return Err(Error::pre(
                            "PseudoLabelMap::from_values",
                            format!("invalid cell ({i}, {j}) holds {v}, must be zero"),
                        ));
                    }
                    continue;
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::pre(
                        "PseudoLabelMap::from_values",
                        format!("target {v} at ({i}, {j}) is outside [0, 1]"),
                    ));
                }
                if best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((i * n + j, v));
                }
            }
        }
        let (arg, _) = best.expect("n >= 1 guarantees at least one valid cell");
        Ok(PseudoLabelMap { n, values, arg_i: arg / n, arg_j: arg % n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Cell that generated the labels (argmax of the source map).
    pub fn argmax(&self) -> (usize, usize) {
        (self.arg_i, self.arg_j)
    }
}

/// Temporal intersection-over-union of two `[start, end]` intervals.
pub fn iou(a: (f64, f64), b: (f64, f64)) -> Result<f64> {
    for (s, e) in [a, b] {
        if !(s < e) || !s.is_finite() || !e.is_finite() {
            return Err(Error::Interval(format!("[{s}, {e}] is not a proper interval")));
        }
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = a.1.max(b.1) - a.0.min(b.0);
    Ok(inter / union)
}

/// Video-level binary cross entropy between the matching score and the
/// pairing label, with the score clamped away from 0 and 1 first.
pub fn mil_loss<S: Scalar>(tape: &mut Tape<S>, p: Var, y_m: bool) -> Result<Var> {
    if tape.numel(p) != 1 {
        return Err(Error::pre("mil_loss", "matching score must be a scalar"));
    }
    let clamped = tape.clamp(p, S::from_f64_lossy(EPS), S::from_f64_lossy(1.0 - EPS))?;
    if y_m {
        let lp = tape.ln(clamped)?;
        tape.scale(lp, -S::one())
    } else {
        let q = tape.sub_from_const(S::one(), clamped)?;
        let lq = tape.ln(q)?;
        tape.scale(lq, -S::one())
    }
}

/// Truncated soft labels from a score map: every valid cell's label is its
/// span overlap with the argmax cell's span, pushed to 0 at or below
/// `o_min`, to 1 at or above `o_max`, and rescaled linearly in between.
/// The returned weight is the map's maximum score.
///
/// Spans are measured in clip units (`[i, j+1]`), which matches any other
/// unit because overlap ratios are scale-free.
pub fn pseudo_labels<S: Scalar>(
    map_values: &[S],
    n: usize,
    th: Thresholds,
) -> Result<(PseudoLabelMap, f64)> {
    th.validate()?;
    if n == 0 || map_values.len() != n * n {
        return Err(Error::dim(
            "pseudo_labels",
            format!("{} values do not form an {n} x {n} grid", map_values.len()),
        ));
    }
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        for j in i..n {
            let v = map_values[i * n + j].to_f64_lossy();
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((i * n + j, v));
            }
        }
    }
    let (arg, w) = best.ok_or_else(|| Error::pre("pseudo_labels", "no valid cells"))?;
    let (arg_i, arg_j) = (arg / n, arg % n);
    let anchor = moment_to_span(arg_i, arg_j, n, n as f64)?;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let span = moment_to_span(i, j, n, n as f64)?;
            let o = iou(span, anchor)?;
            values[i * n + j] = if o <= th.o_min {
                0.0
            } else if o >= th.o_max {
                1.0
            } else {
                (o - th.o_min) / (th.o_max - th.o_min)
            };
        }
    }
    Ok((PseudoLabelMap { n, values, arg_i, arg_j }, w))
}

/// Weighted soft-target cross entropy between a score map and a label map:
/// `(w / C) * Σ_valid -(y ln p + (1-y) ln(1-p))` with `C = n(n+1)/2`.
/// Labels and weight are constants; gradient flows only through the map.
pub fn soft_ce_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pred: Var,
    labels: &PseudoLabelMap,
    w: f64,
    mask: &Mask,
) -> Result<Var> {
    let n = labels.n();
    if tape.numel(pred) != n * n {
        return Err(Error::dim(
            "soft_ce_loss",
            format!("map has {} cells, labels {}", tape.numel(pred), n * n),
        ));
    }
    if mask.len() != n * n {
        return Err(Error::dim("soft_ce_loss", "mask does not match the grid"));
    }
    let y: Vec<S> = labels.values().iter().map(|v| S::from_f64_lossy(*v)).collect();
    let y_var = tape.input(&y, &[n * n])?;
    let y_inv: Vec<S> = labels.values().iter().map(|v| S::from_f64_lossy(1.0 - *v)).collect();
    let y_inv_var = tape.input(&y_inv, &[n * n])?;
    let p = tape.clamp(pred, S::from_f64_lossy(EPS), S::from_f64_lossy(1.0 - EPS))?;
    let lp = tape.ln(p)?;
    let q = tape.sub_from_const(S::one(), p)?;
    let lq = tape.ln(q)?;
    let pos = tape.hadamard(y_var, lp)?;
    let neg = tape.hadamard(y_inv_var, lq)?;
    let both = tape.add(pos, neg)?;
    let total = tape.masked_sum(both, mask)?;
    let c = valid_moment_count(n) as f64;
    tape.scale(total, S::from_f64_lossy(-w / c))
}

fn average<S: Scalar>(tape: &mut Tape<S>, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = tape.add(acc, *t)?;
    }
    tape.scale(acc, S::from_f64_lossy(1.0 / terms.len() as f64))
}

/// Self-discriminating loss: each sentence's map is trained toward soft
/// labels generated from itself, weighted by its own confidence, averaged
/// over the paragraph.
pub fn sd_loss<S: Scalar>(
    tape: &mut Tape<S>,
    maps: &[Var],
    n: usize,
    th: Thresholds,
    mask: &Mask,
) -> Result<Var> {
    if maps.is_empty() {
        return Err(Error::pre("sd_loss", "no sentences"));
    }
    let mut terms = Vec::with_capacity(maps.len());
    for m in maps {
        let (labels, w) = pseudo_labels(tape.values(*m), n, th)?;
        terms.push(soft_ce_loss(tape, *m, &labels, w, mask)?);
    }
    average(tape, &terms)
}

/// Complementary loss: labels and confidence come from the matching
/// classifier's maps, the penalty lands on the complementary branch's maps.
pub fn cb_loss<S: Scalar>(
    tape: &mut Tape<S>,
    src_maps: &[Var],
    cb_maps: &[Var],
    n: usize,
    th: Thresholds,
    mask: &Mask,
) -> Result<Var> {
    if src_maps.len() != cb_maps.len() {
        return Err(Error::contract(
            "cb_loss",
            format!("{} source maps vs {} complementary maps", src_maps.len(), cb_maps.len()),
        ));
    }
    if src_maps.is_empty() {
        return Err(Error::pre("cb_loss", "no sentences"));
    }
    let mut terms = Vec::with_capacity(src_maps.len());
    for (src, cb) in src_maps.iter().zip(cb_maps) {
        let (labels, w) = pseudo_labels(tape.values(*src), n, th)?;
        terms.push(soft_ce_loss(tape, *cb, &labels, w, mask)?);
    }
    average(tape, &terms)
}

/// Self-discriminating loss applied to the complementary branch: labels,
/// confidence, and predictions all come from the complementary maps.
pub fn cb_sd_loss<S: Scalar>(
    tape: &mut Tape<S>,
    cb_maps: &[Var],
    n: usize,
    th: Thresholds,
    mask: &Mask,
) -> Result<Var> {
    sd_loss(tape, cb_maps, n, th, mask)
}

/// Optional loss components feeding the total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub mil: Var,
    pub sd: Option<Var>,
    pub cb: Option<Var>,
    pub cb_sd: Option<Var>,
}

/// Gated weighted total. For matched pairs every present component
/// contributes (`alpha`, `beta`, `gamma`, `gamma` respectively); for
/// mismatched pairs the result is exactly `alpha * mil` and the
/// pseudo-label terms are ignored.
pub fn total_loss<S: Scalar>(
    tape: &mut Tape<S>,
    terms: LossTerms,
    weights: LossWeights,
    y_m: bool,
) -> Result<Var> {
    weights.validate()?;
    let mut acc = tape.scale(terms.mil, S::from_f64_lossy(weights.alpha))?;
    if !y_m {
        return Ok(acc);
    }
    for (term, weight) in [
        (terms.cb, weights.beta),
        (terms.sd, weights.gamma),
        (terms.cb_sd, weights.gamma),
    ] {
        if let Some(t) = term {
            let scaled = tape.scale(t, S::from_f64_lossy(weight))?;
            acc = tape.add(acc, scaled)?;
        }
    }
    Ok(acc)
}
