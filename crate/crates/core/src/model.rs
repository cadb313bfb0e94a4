//! Cross-modal grounding model: sentence/moment fusion via Hadamard
//! product, a stack of masked 2D convolutions over the moment grid, and
//! sigmoid score heads read out by a max-of-max matching score.

use rand::Rng;

use crate::autodiff::{Activation, Mask, ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::moment::{build_map_pool, build_map_stackconv, upper_triangle_mask, ClipFeatures};
use crate::scalar::Scalar;
use crate::text::{EncoderConfig, TextEncoder};

/// How the moment feature map is produced from clip features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapBackend {
    /// Elementwise max over the clips of each span; parameter-free.
    Pool,
    /// Learned stacked size-2 convolution along span length.
    Stackconv,
}

impl MapBackend {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pool" => Ok(MapBackend::Pool),
            "stackconv" => Ok(MapBackend::Stackconv),
            other => Err(Error::Config(format!("unknown map backend `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapBackend::Pool => "pool",
            MapBackend::Stackconv => "stackconv",
        }
    }
}

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// Clips per video; the moment grid is n x n.
    pub n: usize,
    /// Sentence vector length.
    pub d_s: usize,
    /// Clip feature channels.
    pub d_v: usize,
    /// Fused channels inside the grounding stack.
    pub d_f: usize,
    /// Convolution layers over the moment grid.
    pub tan_layers: usize,
    /// Square kernel size, odd.
    pub tan_kernel: usize,
    pub encoder_layers: usize,
    pub map_backend: MapBackend,
    /// Nonlinearity inside the map-building recursion (stackconv only).
    pub map_activation: Activation,
    /// Nonlinearity between grid convolutions.
    pub tan_activation: Activation,
    /// Whether the complementary scoring branch exists.
    pub cb_enabled: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n: 16,
            d_s: 64,
            d_v: 16,
            d_f: 32,
            tan_layers: 4,
            tan_kernel: 3,
            encoder_layers: 1,
            map_backend: MapBackend::Stackconv,
            map_activation: Activation::Relu,
            tan_activation: Activation::Relu,
            cb_enabled: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("n", self.n), ("d_s", self.d_s), ("d_v", self.d_v), ("d_f", self.d_f)] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_s % 2 != 0 {
            return Err(Error::Config(format!("d_s = {} must be even", self.d_s)));
        }
        if self.tan_layers == 0 {
            return Err(Error::Config("tan_layers must be at least 1".into()));
        }
        if self.tan_kernel % 2 == 0 {
            return Err(Error::Config(format!("tan_kernel = {} must be odd", self.tan_kernel)));
        }
        if self.encoder_layers == 0 {
            return Err(Error::Config("encoder_layers must be at least 1".into()));
        }
        Ok(())
    }
}

/// Scored moment maps for one (video, paragraph) pair. Each map is a flat
/// row-major `n*n` node with exact zeros outside the upper triangle.
pub struct ForwardOutput {
    /// Matching-classifier score map per sentence.
    pub match_maps: Vec<Var>,
    /// Complementary-branch score map per sentence, when enabled.
    pub cb_maps: Option<Vec<Var>>,
    /// Sentence vectors, for probing.
    pub sentence_vecs: Vec<Var>,
}

/// Video-level matching score with argmax diagnostics.
pub struct MatchingScore {
    /// Scalar node, the max over sentences of each map's max.
    pub p: Var,
    /// Sentence index holding the winning entry.
    pub arg_k: usize,
    /// Grid coordinates of the winning entry.
    pub arg_i: usize,
    pub arg_j: usize,
}

/// Full grounding model: parameter handles plus the grid mask.
pub struct WstanModel<S: Scalar> {
    cfg: ModelConfig,
    pub encoder: TextEncoder,
    w_s: ParamId,
    w_v: ParamId,
    map_kernel: Option<ParamId>,
    tan_kernels: Vec<ParamId>,
    head_w: ParamId,
    head_b: ParamId,
    cb_head_w: Option<ParamId>,
    cb_head_b: Option<ParamId>,
    mask: Mask,
    _marker: std::marker::PhantomData<S>,
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<S: Scalar> WstanModel<S> {
    /// Register all parameters for the given configuration.
    pub fn init(
        cfg: ModelConfig,
        vocab_size: usize,
        params: &mut ParamSet<S>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let encoder = TextEncoder::init(
            params,
            EncoderConfig { vocab_size, d_s: cfg.d_s, layers: cfg.encoder_layers },
            rng,
        )?;
        let bs = xavier(cfg.d_s, cfg.d_f);
        let w_s = params.insert("fuse.w_s", Tensor::uniform(&[cfg.d_f, cfg.d_s], -bs, bs, rng)?)?;
        let bv = xavier(cfg.d_v, cfg.d_f);
        let w_v = params.insert("fuse.w_v", Tensor::uniform(&[cfg.d_f, cfg.d_v], -bv, bv, rng)?)?;
        let map_kernel = match cfg.map_backend {
            MapBackend::Pool => None,
            MapBackend::Stackconv => {
                // Start near the average of the two shorter spans so early
                // maps behave like mean pooling, then let training bend it.
                let d = cfg.d_v;
                let mut values = vec![S::zero(); d * 2 * d];
                for o in 0..d {
                    values[o * 2 * d + o] = S::from_f64_lossy(0.5);
                    values[o * 2 * d + d + o] = S::from_f64_lossy(0.5);
                }
                for v in values.iter_mut() {
                    *v += S::from_f64_lossy(rng.random_range(-0.05..0.05));
                }
                Some(params.insert("map.kernel", Tensor::trainable(&[d, 2 * d], values)?)?)
            }
        };
        let fan = cfg.tan_kernel * cfg.tan_kernel * cfg.d_f;
        let bk = (6.0 / (2 * fan) as f64).sqrt();
        let tan_kernels = (0..cfg.tan_layers)
            .map(|l| {
                params.insert(
                    &format!("tan.l{l}.kernel"),
                    Tensor::uniform(
                        &[cfg.tan_kernel, cfg.tan_kernel, cfg.d_f, cfg.d_f],
                        -bk,
                        bk,
                        rng,
                    )?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let bh = xavier(cfg.d_f, 1);
        let head_w = params.insert("head.w", Tensor::uniform(&[1, cfg.d_f], -bh, bh, rng)?)?;
        let head_b = params.insert("head.b", Tensor::trainable(&[1], vec![S::zero()])?)?;
        let (cb_head_w, cb_head_b) = if cfg.cb_enabled {
            (
                Some(params.insert("cb_head.w", Tensor::uniform(&[1, cfg.d_f], -bh, bh, rng)?)?),
                Some(params.insert("cb_head.b", Tensor::trainable(&[1], vec![S::zero()])?)?),
            )
        } else {
            (None, None)
        };
        Ok(WstanModel {
            cfg,
            encoder,
            w_s,
            w_v,
            map_kernel,
            tan_kernels,
            head_w,
            head_b,
            cb_head_w,
            cb_head_b,
            mask: upper_triangle_mask(cfg.n),
            _marker: std::marker::PhantomData,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Shared validity mask for the moment grid.
    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Build the moment feature map node for one video.
    pub fn moment_map(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        clips: &ClipFeatures<S>,
    ) -> Result<Var> {
        if clips.n() != self.cfg.n || clips.dim() != self.cfg.d_v {
            return Err(Error::Config(format!(
                "clip features {}x{} do not match configured {}x{}",
                clips.n(),
                clips.dim(),
                self.cfg.n,
                self.cfg.d_v
            )));
        }
        match self.cfg.map_backend {
            MapBackend::Pool => {
                let map = build_map_pool(clips);
                tape.input(map.values(), &[self.cfg.n * self.cfg.n, self.cfg.d_v])
            }
            MapBackend::Stackconv => {
                let cv = tape.input(clips.values(), &[self.cfg.n, self.cfg.d_v])?;
                let kernel = tape.param(params, self.map_kernel.expect("stackconv kernel"))?;
                build_map_stackconv(tape, cv, kernel, self.cfg.n, self.cfg.d_v, self.cfg.map_activation)
            }
        }
    }

    /// Hadamard fusion of a sentence vector with every moment feature:
    /// `(W_s h) ⊙ (W_v F_ij)` per valid cell. Invalid cells stay exactly
    /// zero because both projections are bias-free.
    pub fn fuse(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        sentence: Var,
        map: Var,
    ) -> Result<Var> {
        if tape.numel(sentence) != self.cfg.d_s {
            return Err(Error::Config(format!(
                "sentence vector of {} elements does not match d_s = {}",
                tape.numel(sentence),
                self.cfg.d_s
            )));
        }
        let cells = self.cfg.n * self.cfg.n;
        if tape.numel(map) != cells * self.cfg.d_v {
            return Err(Error::Config(format!(
                "moment map of {} elements does not match {} cells x d_v = {}",
                tape.numel(map),
                cells,
                self.cfg.d_v
            )));
        }
        let ws = tape.param(params, self.w_s)?;
        let s_col = tape.affine(sentence, ws, None)?;
        let tiled = tape.repeat_rows(s_col, cells)?;
        let wv = tape.param(params, self.w_v)?;
        let v_col = tape.affine(map, wv, None)?;
        tape.hadamard(tiled, v_col)
    }

    /// Stack of masked same-size convolutions over the grid with the
    /// configured activation between layers; the validity mask is restored
    /// after every nonlinearity.
    pub fn tan_forward(&self, tape: &mut Tape<S>, params: &ParamSet<S>, fused: Var) -> Result<Var> {
        let mut x = fused;
        for (l, kid) in self.tan_kernels.iter().enumerate() {
            let kernel = tape.param(params, *kid)?;
            x = tape.conv2d_masked(x, kernel, &self.mask)?;
            if l + 1 < self.tan_kernels.len() {
                x = self.cfg.tan_activation.apply(tape, x)?;
                x = tape.mask_rows(x, &self.mask)?;
            }
        }
        Ok(x)
    }

    fn head(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        context: Var,
        w: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let wv = tape.param(params, w)?;
        let bv = tape.param(params, b)?;
        let logits = tape.affine(context, wv, Some(bv))?;
        let probs = tape.sigmoid(logits)?;
        tape.mask_rows(probs, &self.mask)
    }

    /// Matching-classifier score map: per-cell affine to one channel, then
    /// sigmoid, then exact re-masking of the lower triangle.
    pub fn score_head(&self, tape: &mut Tape<S>, params: &ParamSet<S>, context: Var) -> Result<Var> {
        self.head(tape, params, context, self.head_w, self.head_b)
    }

    /// Complementary-branch score map: same contract as `score_head` with
    /// independent parameters, read from the same context.
    pub fn cb_score_head(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        context: Var,
    ) -> Result<Var> {
        let (w, b) = match (self.cb_head_w, self.cb_head_b) {
            (Some(w), Some(b)) => (w, b),
            _ => return Err(Error::Config("complementary branch is disabled".into())),
        };
        self.head(tape, params, context, w, b)
    }

    /// Full forward pass for one video and its sentences.
    pub fn forward(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        clips: &ClipFeatures<S>,
        sentences: &[Vec<usize>],
    ) -> Result<ForwardOutput> {
        if sentences.is_empty() {
            return Err(Error::pre("forward", "no sentences"));
        }
        let map = self.moment_map(tape, params, clips)?;
        let mut match_maps = Vec::with_capacity(sentences.len());
        let mut cb_maps = self.cfg.cb_enabled.then(Vec::new);
        let mut sentence_vecs = Vec::with_capacity(sentences.len());
        for tokens in sentences {
            let h = self.encoder.encode(tape, params, tokens)?;
            sentence_vecs.push(h);
            let fused = self.fuse(tape, params, h, map)?;
            let context = self.tan_forward(tape, params, fused)?;
            match_maps.push(self.score_head(tape, params, context)?);
            if let Some(cb) = cb_maps.as_mut() {
                cb.push(self.cb_score_head(tape, params, context)?);
            }
        }
        Ok(ForwardOutput { match_maps, cb_maps, sentence_vecs })
    }
}

/// Video-level matching score: max over valid cells within each sentence's
/// map, then max over sentences. Gradient reaches only the winning entry.
/// Ties resolve to the lowest flat index, then the lowest sentence index.
pub fn matching_score<S: Scalar>(
    tape: &mut Tape<S>,
    maps: &[Var],
    mask: &Mask,
) -> Result<MatchingScore> {
    if maps.is_empty() {
        return Err(Error::pre("matching_score", "empty map list"));
    }
    let n = (mask.len() as f64).sqrt() as usize;
    if n * n != mask.len() {
        return Err(Error::dim("matching_score", format!("mask of {} cells is not square", mask.len())));
    }
    let mut per_sentence = Vec::with_capacity(maps.len());
    let mut args = Vec::with_capacity(maps.len());
    for m in maps {
        if tape.numel(*m) != mask.len() {
            return Err(Error::dim(
                "matching_score",
                format!("map has {} cells, mask has {}", tape.numel(*m), mask.len()),
            ));
        }
        let (pk, arg) = tape.max_reduce(*m, Some(mask))?;
        per_sentence.push(pk);
        args.push(arg);
    }
    let stacked = tape.concat(&per_sentence)?;
    let (p, arg_k) = tape.max_reduce(stacked, None)?;
    let flat = args[arg_k];
    Ok(MatchingScore { p, arg_k, arg_i: flat / n, arg_j: flat % n })
}
