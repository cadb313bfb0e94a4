//! Reproducible synthetic corpora for weakly supervised grounding: planted
//! feature events inside noise, templated description sentences, cross-video
//! negative sampling, and a JSON Lines codec. Ground-truth spans ride along
//! for evaluation only; nothing on the training path reads them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moment::ClipFeatures;
use crate::text::Vocabulary;
use crate::Real;

const VERBS: [&str; 12] = [
    "opens", "closes", "lifts", "drops", "pushes", "pulls", "cleans", "paints", "carries",
    "throws", "catches", "stacks",
];
const OBJECTS: [&str; 12] = [
    "door", "window", "box", "cup", "chair", "table", "book", "ball", "bottle", "ladder",
    "lamp", "bag",
];
const MODIFIERS: [&str; 8] = [
    "slowly", "quickly", "carefully", "twice", "again", "outside", "inside", "upstairs",
];

/// Span packing gives up after this many rejected placements per episode.
const PLACEMENT_ATTEMPTS: usize = 1000;

/// Generator settings. Counts, grid geometry, event inventory, paragraph
/// size range, planted span length range, and the noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub train_episodes: usize,
    pub test_episodes: usize,
    /// Clips per episode.
    pub n: usize,
    /// Clip feature width.
    pub d_v: usize,
    /// Size of the shared event inventory.
    pub num_events: usize,
    /// Sentences per episode, sampled uniformly from this inclusive range.
    pub n_p_min: usize,
    pub n_p_max: usize,
    /// Planted span length in clips, sampled uniformly from this range.
    pub min_span: usize,
    pub max_span: usize,
    /// Standard deviation of the additive Gaussian feature noise.
    pub sigma: f64,
    /// Seconds per clip; episode duration is `n * clip_seconds`.
    pub clip_seconds: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            train_episodes: 500,
            test_episodes: 100,
            n: 16,
            d_v: 16,
            num_events: 24,
            n_p_min: 2,
            n_p_max: 3,
            min_span: 3,
            max_span: 6,
            sigma: 0.1,
            clip_seconds: 2.0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d_v == 0 {
            return Err(Error::Config("corpus needs n >= 1 and d_v >= 1".into()));
        }
        if self.n_p_min == 0 || self.n_p_min > self.n_p_max {
            return Err(Error::Config(format!(
                "paragraph size range [{}, {}] is empty or starts at zero",
                self.n_p_min, self.n_p_max
            )));
        }
        if self.min_span == 0 || self.min_span > self.max_span || self.max_span > self.n {
            return Err(Error::Config(format!(
                "span length range [{}, {}] does not fit {} clips",
                self.min_span, self.max_span, self.n
            )));
        }
        if self.num_events < self.n_p_max {
            return Err(Error::Config(format!(
                "{} events cannot fill paragraphs of {} distinct sentences",
                self.num_events, self.n_p_max
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!("sigma = {} must be finite and >= 0", self.sigma)));
        }
        if !(self.clip_seconds > 0.0) || !self.clip_seconds.is_finite() {
            return Err(Error::Config(format!(
                "clip_seconds = {} must be finite and positive",
                self.clip_seconds
            )));
        }
        Ok(())
    }
}

/// One plantable event: a feature signature plus the words describing it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPrototype {
    pub id: usize,
    pub features: Vec<Real>,
    pub verb: &'static str,
    pub object: &'static str,
    pub modifier: Option<&'static str>,
}

impl EventPrototype {
    pub fn sentence(&self) -> String {
        match self.modifier {
            Some(m) => format!("person {} the {} {}", self.verb, self.object, m),
            None => format!("person {} the {}", self.verb, self.object),
        }
    }
}

/// One synthetic video with its paragraph and held-out span annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub id: u64,
    pub duration: f64,
    pub clips: Vec<Vec<Real>>,
    pub sentences: Vec<String>,
    pub gt_spans: Vec<(usize, usize)>,
}

impl Episode {
    pub fn validate(&self) -> Result<()> {
        let n = self.clips.len();
        if n == 0 {
            return Err(Error::Generation(format!("episode {} has no clips", self.id)));
        }
        let dim = self.clips[0].len();
        if dim == 0 || self.clips.iter().any(|c| c.len() != dim) {
            return Err(Error::Generation(format!(
                "episode {} has ragged or empty clip features",
                self.id
            )));
        }
        if self.sentences.len() != self.gt_spans.len() || self.sentences.is_empty() {
            return Err(Error::Generation(format!(
                "episode {} has {} sentences but {} spans",
                self.id,
                self.sentences.len(),
                self.gt_spans.len()
            )));
        }
        for (i, j) in &self.gt_spans {
            if i > j || *j >= n {
                return Err(Error::Generation(format!(
                    "episode {} span ({i}, {j}) does not fit {n} clips",
                    self.id
                )));
            }
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::Generation(format!(
                "episode {} duration {} must be finite and positive",
                self.id, self.duration
            )));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.clips.len()
    }

    /// Flattens the nested clip arrays into the model's input type.
    pub fn clip_features(&self) -> Result<ClipFeatures<Real>> {
        let dim = self.clips[0].len();
        let flat: Vec<Real> = self.clips.iter().flatten().copied().collect();
        ClipFeatures::from_values(self.clips.len(), dim, flat)
    }
}

/// A training example: one episode's clips paired with a paragraph that is
/// either its own (`y_m` true) or another episode's (`y_m` false). The
/// source index records where the paragraph came from; `y_m` holds exactly
/// when source and video coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub video_index: usize,
    pub source_index: usize,
    pub paragraph: Vec<String>,
    pub y_m: bool,
}

/// Stable per-episode sub-seed so episodes are independent of generation
/// order and of each other (splitmix64 finalizer over seed and id).
fn mix_seed(seed: u64, id: u64) -> u64 {
    let mut z = seed ^ id.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws the shared event inventory: feature signatures uniform in [0, 2]
/// per coordinate, re-drawn until all pairwise distances reach 1.0, with
/// words assigned round-robin so every event reads differently.
pub fn gen_prototypes(cfg: &CorpusConfig, seed: u64) -> Result<Vec<EventPrototype>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX));
    let mut protos: Vec<EventPrototype> = Vec::with_capacity(cfg.num_events);
    for id in 0..cfg.num_events {
        let mut attempts = 0;
        let features = loop {
            let candidate: Vec<Real> = (0..cfg.d_v).map(|_| rng.random_range(0.0..2.0)).collect();
            let separated = protos.iter().all(|p| {
                let d2: Real = p
                    .features
                    .iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2 >= 1.0
            });
            if separated {
                break candidate;
            }
            attempts += 1;
            if attempts >= PLACEMENT_ATTEMPTS {
                return Err(Error::Generation(format!(
                    "could not separate event {id} from {} existing prototypes in d_v = {}",
                    protos.len(),
                    cfg.d_v
                )));
            }
        };
        protos.push(EventPrototype {
            id,
            features,
            verb: VERBS[id % VERBS.len()],
            object: OBJECTS[(id / VERBS.len()) % OBJECTS.len()],
            modifier: if id % 2 == 1 { Some(MODIFIERS[id % MODIFIERS.len()]) } else { None },
        });
    }
    Ok(protos)
}

fn gen_episode(
    cfg: &CorpusConfig,
    protos: &[EventPrototype],
    seed: u64,
    id: u64,
) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id));
    let n_p = rng.random_range(cfg.n_p_min..=cfg.n_p_max);
    if n_p * cfg.min_span > cfg.n {
        return Err(Error::Generation(format!(
            "{n_p} spans of at least {} clips cannot fit in {} clips",
            cfg.min_span, cfg.n
        )));
    }

    // Rejection-sampled non-overlapping spans, then sorted so the paragraph
    // reads in temporal order. A layout can wedge itself (early long spans
    // leaving no room), so persistent rejection discards the partial layout
    // and starts over; only repeated whole-layout failure is an error.
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(n_p);
    let mut rejects = 0;
    let mut restarts = 0;
    while spans.len() < n_p {
        let len = rng.random_range(cfg.min_span..=cfg.max_span);
        let start = rng.random_range(0..=cfg.n - len);
        let end = start + len - 1;
        if spans.iter().all(|(s, e)| end < *s || *e < start) {
            spans.push((start, end));
            rejects = 0;
        } else {
            rejects += 1;
            if rejects >= 100 {
                spans.clear();
                rejects = 0;
                restarts += 1;
                if restarts >= PLACEMENT_ATTEMPTS {
                    return Err(Error::Generation(format!(
                        "episode {id}: could not place {n_p} disjoint spans in {} clips",
                        cfg.n
                    )));
                }
            }
        }
    }
    spans.sort_unstable();

    let events = sample(&mut rng, protos.len(), n_p);
    let noise = Normal::new(0.0, cfg.sigma)
        .map_err(|e| Error::Generation(format!("noise distribution: {e}")))?;
    let mut clips = vec![vec![0.0; cfg.d_v]; cfg.n];
    for clip in clips.iter_mut().flatten() {
        *clip = noise.sample(&mut rng);
    }
    let mut sentences = Vec::with_capacity(n_p);
    for (&(start, end), event) in spans.iter().zip(events.iter()) {
        let proto = &protos[event];
        for clip in &mut clips[start..=end] {
            for (c, f) in clip.iter_mut().zip(&proto.features) {
                *c += f;
            }
        }
        sentences.push(proto.sentence());
    }

    let episode = Episode {
        id,
        duration: cfg.n as f64 * cfg.clip_seconds,
        clips,
        sentences,
        gt_spans: spans,
    };
    episode.validate()?;
    Ok(episode)
}

/// Generates `count` episodes with ids starting at `id_base`, all planted
/// from the same prototype inventory. Train and test splits share
/// prototypes by construction: same `cfg` and `seed`, disjoint id ranges.
pub fn gen_episodes(
    cfg: &CorpusConfig,
    protos: &[EventPrototype],
    seed: u64,
    count: usize,
    id_base: u64,
) -> Result<Vec<Episode>> {
    (0..count as u64).map(|k| gen_episode(cfg, protos, seed, id_base + k)).collect()
}

/// Full corpus: `(train, test)` with shared prototypes.
pub fn gen_corpus(cfg: &CorpusConfig, seed: u64) -> Result<(Vec<Episode>, Vec<Episode>)> {
    let protos = gen_prototypes(cfg, seed)?;
    let train = gen_episodes(cfg, &protos, seed, cfg.train_episodes, 0)?;
    let test = gen_episodes(cfg, &protos, seed, cfg.test_episodes, cfg.train_episodes as u64)?;
    Ok((train, test))
}

/// Samples one weakly supervised training pair: with probability one half
/// the paragraph is swapped for a uniformly chosen other episode's, and a
/// paragraph that still has at least two sentences loses one at random.
pub fn make_training_pair(
    corpus: &[Episode],
    video_index: usize,
    rng: &mut impl Rng,
) -> Result<TrainingPair> {
    if corpus.len() < 2 {
        return Err(Error::Sampling(
            "negative sampling needs at least two episodes".into(),
        ));
    }
    if video_index >= corpus.len() {
        return Err(Error::Sampling(format!(
            "episode index {video_index} out of range for {} episodes",
            corpus.len()
        )));
    }
    let negative = rng.random_bool(0.5);
    let source = if negative {
        let mut other = rng.random_range(0..corpus.len() - 1);
        if other >= video_index {
            other += 1;
        }
        other
    } else {
        video_index
    };
    let mut paragraph = corpus[source].sentences.clone();
    if paragraph.len() >= 2 {
        paragraph.remove(rng.random_range(0..paragraph.len()));
    }
    Ok(TrainingPair { video_index, source_index: source, paragraph, y_m: !negative })
}

/// Collects every word of every sentence into a vocabulary, in corpus order.
pub fn build_vocabulary(episodes: &[Episode]) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for episode in episodes {
        for sentence in &episode.sentences {
            for word in crate::text::normalize_words(sentence) {
                vocab.add(&word);
            }
        }
    }
    vocab
}

/// JSON Lines, one episode per line.
pub fn save_corpus(episodes: &[Episode], path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    for episode in episodes {
        let line = serde_json::to_string(episode)
            .map_err(|e| Error::Generation(format!("episode {}: {e}", episode.id)))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a JSON Lines corpus, validating every episode. Errors carry the
/// 1-based line number. An empty file is an empty corpus.
pub fn load_corpus(path: &Path) -> Result<Vec<Episode>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut episodes = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            return Err(Error::Parse { line: idx + 1, detail: "blank line in corpus".into() });
        }
        let episode: Episode = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 1, detail: e.to_string() })?;
        episode
            .validate()
            .map_err(|e| Error::Parse { line: idx + 1, detail: e.to_string() })?;
        episodes.push(episode);
    }
    Ok(episodes)
}
