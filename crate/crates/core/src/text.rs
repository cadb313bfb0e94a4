//! Sentence encoding: vocabulary handling, tokenization, and a from-scratch
//! bidirectional LSTM producing one vector per sentence.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reserved index for padding (unused at runtime; sentences keep their true
/// length, but the slot stays reserved so indices match the file format).
pub const PAD: usize = 0;
/// Reserved index for out-of-vocabulary tokens.
pub const OOV: usize = 1;

/// Dense token table. Indices 0 and 1 are reserved; real tokens start at 2.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary::default()
    }

    /// Add a token if absent; returns its index either way.
    pub fn add(&mut self, token: &str) -> usize {
        if let Some(i) = self.index.get(token) {
            return *i;
        }
        let i = self.tokens.len() + 2;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    /// Index for a token, OOV when unknown.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    /// Total table size including the two reserved slots.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token text for an index, if it names a real token.
    pub fn token(&self, index: usize) -> Option<&str> {
        index.checked_sub(2).and_then(|i| self.tokens.get(i)).map(String::as_str)
    }

    /// One token per line; the token on line `l` (0-based) has index `l + 2`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut vocab = Vocabulary::new();
        for (lineno, line) in text.lines().enumerate() {
            let token = line.trim();
            if token.is_empty() {
                return Err(Error::Parse { line: lineno + 1, detail: "blank vocabulary line".into() });
            }
            if vocab.index.contains_key(token) {
                return Err(Error::Parse {
                    line: lineno + 1,
                    detail: format!("duplicate token `{token}`"),
                });
            }
            vocab.add(token);
        }
        Ok(vocab)
    }
}

/// Lowercase, split on whitespace, and strip punctuation. Returns the
/// surviving words; empties vanish.
pub fn normalize_words(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| w.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect::<String>())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Tokenize a sentence into vocabulary indices; unknown words map to OOV.
pub fn tokenize(sentence: &str, vocab: &Vocabulary) -> Result<Vec<usize>> {
    let words = normalize_words(sentence);
    if words.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(words.iter().map(|w| vocab.lookup(w)).collect())
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    /// Sentence vector length; also the embedding width. Must be even so
    /// each direction contributes exactly half.
    pub d_s: usize,
    pub layers: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocabulary size {} cannot hold the reserved tokens",
                self.vocab_size
            )));
        }
        if self.d_s == 0 || self.d_s % 2 != 0 {
            return Err(Error::Config(format!("d_s = {} must be positive and even", self.d_s)));
        }
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        Ok(())
    }
}

struct DirParams {
    w: ParamId,
    b: ParamId,
}

/// Bidirectional multi-layer LSTM over trainable embeddings. The sentence
/// vector is the concatenation of the forward pass's final hidden state and
/// the backward pass's final hidden state from the top layer.
pub struct TextEncoder {
    cfg: EncoderConfig,
    embed: ParamId,
    fwd: Vec<DirParams>,
    bwd: Vec<DirParams>,
}

impl TextEncoder {
    /// Register all encoder parameters. Embeddings start uniform in
    /// [-0.1, 0.1); gate weights uniform with a 1/sqrt(hidden) bound and
    /// zero biases.
    pub fn init<S: Scalar>(
        params: &mut ParamSet<S>,
        cfg: EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.d_s / 2;
        let embed = params.insert(
            "text.embed",
            Tensor::uniform(&[cfg.vocab_size, cfg.d_s], -0.1, 0.1, rng)?,
        )?;
        let bound = 1.0 / (h as f64).sqrt();
        let mut dirs = |tag: &str| -> Result<Vec<DirParams>> {
            (0..cfg.layers)
                .map(|l| {
                    // Every layer consumes d_s inputs: embeddings below,
                    // two concatenated directions above.
                    let w = params.insert(
                        &format!("text.l{l}.{tag}.w"),
                        Tensor::uniform(&[4 * h, cfg.d_s + h], -bound, bound, rng)?,
                    )?;
                    let b = params.insert(
                        &format!("text.l{l}.{tag}.b"),
                        Tensor::trainable(&[4 * h], vec![S::zero(); 4 * h])?,
                    )?;
                    Ok(DirParams { w, b })
                })
                .collect()
        };
        let fwd = dirs("fwd")?;
        let bwd = dirs("bwd")?;
        Ok(TextEncoder { cfg, embed, fwd, bwd })
    }

    pub fn config(&self) -> EncoderConfig {
        self.cfg
    }

    /// One LSTM direction over the given step order; returns the hidden
    /// state per step (in input order positions) and the final state.
    fn run_direction<S: Scalar>(
        tape: &mut Tape<S>,
        xs: &[Var],
        order: &[usize],
        w: Var,
        b: Var,
        h: usize,
    ) -> Result<(Vec<Var>, Var)> {
        let mut hidden = tape.zeros_input(h)?;
        let mut cell = tape.zeros_input(h)?;
        let mut per_step = vec![hidden; xs.len()];
        for &t in order {
            let cat = tape.concat(&[xs[t], hidden])?;
            let gates = tape.affine(cat, w, Some(b))?;
            let i_gate = tape.slice(gates, 0, h)?;
            let i_gate = tape.sigmoid(i_gate)?;
            let f_gate = tape.slice(gates, h, h)?;
            let f_gate = tape.sigmoid(f_gate)?;
            let g_gate = tape.slice(gates, 2 * h, h)?;
            let g_gate = tape.tanh(g_gate)?;
            let o_gate = tape.slice(gates, 3 * h, h)?;
            let o_gate = tape.sigmoid(o_gate)?;
            let keep = tape.hadamard(f_gate, cell)?;
            let write = tape.hadamard(i_gate, g_gate)?;
            cell = tape.add(keep, write)?;
            let squashed = tape.tanh(cell)?;
            hidden = tape.hadamard(o_gate, squashed)?;
            per_step[t] = hidden;
        }
        Ok((per_step, hidden))
    }

    /// Encode a tokenized sentence into an on-tape vector of length `d_s`.
    pub fn encode<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        tokens: &[usize],
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptySentence);
        }
        for &t in tokens {
            if t >= self.cfg.vocab_size {
                return Err(Error::Vocabulary(format!(
                    "token index {t} outside table of {}",
                    self.cfg.vocab_size
                )));
            }
        }
        let h = self.cfg.d_s / 2;
        let embed = tape.param(params, self.embed)?;
        let mut xs: Vec<Var> = tokens
            .iter()
            .map(|&t| tape.slice(embed, t * self.cfg.d_s, self.cfg.d_s))
            .collect::<Result<_>>()?;
        let forward_order: Vec<usize> = (0..tokens.len()).collect();
        let backward_order: Vec<usize> = (0..tokens.len()).rev().collect();
        let mut final_fwd = None;
        let mut final_bwd = None;
        for l in 0..self.cfg.layers {
            let wf = tape.param(params, self.fwd[l].w)?;
            let bf = tape.param(params, self.fwd[l].b)?;
            let (steps_f, last_f) = Self::run_direction(tape, &xs, &forward_order, wf, bf, h)?;
            let wb = tape.param(params, self.bwd[l].w)?;
            let bb = tape.param(params, self.bwd[l].b)?;
            let (steps_b, last_b) = Self::run_direction(tape, &xs, &backward_order, wb, bb, h)?;
            final_fwd = Some(last_f);
            final_bwd = Some(last_b);
            if l + 1 < self.cfg.layers {
                xs = steps_f
                    .iter()
                    .zip(&steps_b)
                    .map(|(f, bk)| tape.concat(&[*f, *bk]))
                    .collect::<Result<_>>()?;
            }
        }
        tape.concat(&[final_fwd.expect("at least one layer"), final_bwd.expect("at least one layer")])
    }
}
