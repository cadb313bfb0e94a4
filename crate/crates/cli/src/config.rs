//! Run configuration: one flat key=value namespace shared by the config
//! file, the command-line overrides, the `defaults` listing, and the
//! compatibility fingerprint embedded in artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use wstan_core::autodiff::Activation;
use wstan_core::error::{Error, Result};
use wstan_core::losses::{LossWeights, Thresholds};
use wstan_core::model::{MapBackend, ModelConfig};
use wstan_core::synth::CorpusConfig;

/// Every tunable of the pipeline. Field names are the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Corpus shape.
    pub train_episodes: usize,
    pub test_episodes: usize,
    pub n: usize,
    pub d_v: usize,
    pub num_events: usize,
    pub n_p_min: usize,
    pub n_p_max: usize,
    pub min_span: usize,
    pub max_span: usize,
    pub sigma: f64,
    pub clip_seconds: f64,
    pub data_seed: u64,
    // Model shape.
    pub d_s: usize,
    pub d_f: usize,
    pub tan_layers: usize,
    pub tan_kernel: usize,
    pub encoder_layers: usize,
    pub map_backend: String,
    pub map_activation: String,
    pub tan_activation: String,
    // Objective and optimization.
    pub o_min: f64,
    pub o_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_seed: u64,
    // Component toggles.
    pub sd_mil: bool,
    pub cb: bool,
    pub sd_cb: bool,
    // Inference and reporting.
    pub nms_threshold: f64,
    pub eval_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_episodes: 500,
            test_episodes: 100,
            n: 16,
            d_v: 16,
            num_events: 12,
            n_p_min: 2,
            n_p_max: 3,
            min_span: 2,
            max_span: 4,
            sigma: 0.05,
            clip_seconds: 2.0,
            data_seed: 7,
            d_s: 16,
            d_f: 8,
            tan_layers: 2,
            tan_kernel: 3,
            encoder_layers: 1,
            map_backend: "stackconv".into(),
            map_activation: "tanh".into(),
            tan_activation: "tanh".into(),
            o_min: 0.9,
            o_max: 1.0,
            alpha: 0.9,
            beta: 0.05,
            gamma: 0.05,
            lr: 1e-4,
            epochs: 30,
            batch_size: 1,
            train_seed: 7,
            sd_mil: true,
            cb: true,
            sd_cb: true,
            nms_threshold: 0.5,
            eval_seed: 7,
        }
    }
}

/// Command-line overrides, one flag per config key, applied on top of the
/// config file. Absent flags leave the file (or default) value in place.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// Flat key=value config file; every key optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "train_episodes")]
    pub train_episodes: Option<usize>,
    #[arg(long = "test_episodes")]
    pub test_episodes: Option<usize>,
    #[arg(long = "n")]
    pub n: Option<usize>,
    #[arg(long = "d_v")]
    pub d_v: Option<usize>,
    #[arg(long = "num_events")]
    pub num_events: Option<usize>,
    #[arg(long = "n_p_min")]
    pub n_p_min: Option<usize>,
    #[arg(long = "n_p_max")]
    pub n_p_max: Option<usize>,
    #[arg(long = "min_span")]
    pub min_span: Option<usize>,
    #[arg(long = "max_span")]
    pub max_span: Option<usize>,
    #[arg(long = "sigma")]
    pub sigma: Option<f64>,
    #[arg(long = "clip_seconds")]
    pub clip_seconds: Option<f64>,
    #[arg(long = "data_seed")]
    pub data_seed: Option<u64>,
    #[arg(long = "d_s")]
    pub d_s: Option<usize>,
    #[arg(long = "d_f")]
    pub d_f: Option<usize>,
    #[arg(long = "tan_layers")]
    pub tan_layers: Option<usize>,
    #[arg(long = "tan_kernel")]
    pub tan_kernel: Option<usize>,
    #[arg(long = "encoder_layers")]
    pub encoder_layers: Option<usize>,
    #[arg(long = "map_backend")]
    pub map_backend: Option<String>,
    #[arg(long = "map_activation")]
    pub map_activation: Option<String>,
    #[arg(long = "tan_activation")]
    pub tan_activation: Option<String>,
    #[arg(long = "o_min")]
    pub o_min: Option<f64>,
    #[arg(long = "o_max")]
    pub o_max: Option<f64>,
    #[arg(long = "alpha")]
    pub alpha: Option<f64>,
    #[arg(long = "beta")]
    pub beta: Option<f64>,
    #[arg(long = "gamma")]
    pub gamma: Option<f64>,
    #[arg(long = "lr")]
    pub lr: Option<f64>,
    #[arg(long = "epochs")]
    pub epochs: Option<usize>,
    #[arg(long = "batch_size")]
    pub batch_size: Option<usize>,
    #[arg(long = "train_seed")]
    pub train_seed: Option<u64>,
    #[arg(long = "sd_mil")]
    pub sd_mil: Option<bool>,
    #[arg(long = "cb")]
    pub cb: Option<bool>,
    #[arg(long = "sd_cb")]
    pub sd_cb: Option<bool>,
    #[arg(long = "nms_threshold")]
    pub nms_threshold: Option<f64>,
    #[arg(long = "eval_seed")]
    pub eval_seed: Option<u64>,
}

impl RunConfig {
    /// Defaults, then the config file, then flag overrides; validated.
    pub fn resolve(args: &ConfigArgs) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &args.config {
            cfg.merge_file(path)?;
        }
        cfg.merge_args(args);
        cfg.validate()?;
        Ok(cfg)
    }

    fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path)?;
        let mut seen: Vec<String> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                detail: format!("expected key=value, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("duplicate config key `{key}`")));
            }
            seen.push(key.to_string());
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Assign one key from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{value}`")))
        }
        match key {
            "train_episodes" => self.train_episodes = parse(key, value)?,
            "test_episodes" => self.test_episodes = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "d_v" => self.d_v = parse(key, value)?,
            "num_events" => self.num_events = parse(key, value)?,
            "n_p_min" => self.n_p_min = parse(key, value)?,
            "n_p_max" => self.n_p_max = parse(key, value)?,
            "min_span" => self.min_span = parse(key, value)?,
            "max_span" => self.max_span = parse(key, value)?,
            "sigma" => self.sigma = parse(key, value)?,
            "clip_seconds" => self.clip_seconds = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "d_s" => self.d_s = parse(key, value)?,
            "d_f" => self.d_f = parse(key, value)?,
            "tan_layers" => self.tan_layers = parse(key, value)?,
            "tan_kernel" => self.tan_kernel = parse(key, value)?,
            "encoder_layers" => self.encoder_layers = parse(key, value)?,
            "map_backend" => self.map_backend = value.to_string(),
            "map_activation" => self.map_activation = value.to_string(),
            "tan_activation" => self.tan_activation = value.to_string(),
            "o_min" => self.o_min = parse(key, value)?,
            "o_max" => self.o_max = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "train_seed" => self.train_seed = parse(key, value)?,
            "sd_mil" => self.sd_mil = parse(key, value)?,
            "cb" => self.cb = parse(key, value)?,
            "sd_cb" => self.sd_cb = parse(key, value)?,
            "nms_threshold" => self.nms_threshold = parse(key, value)?,
            "eval_seed" => self.eval_seed = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    fn merge_args(&mut self, a: &ConfigArgs) {
        macro_rules! take {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &a.$field { self.$field = v.clone(); })*
            };
        }
        take!(
            train_episodes, test_episodes, n, d_v, num_events, n_p_min, n_p_max, min_span,
            max_span, sigma, clip_seconds, data_seed, d_s, d_f, tan_layers, tan_kernel,
            encoder_layers, map_backend, map_activation, tan_activation, o_min, o_max, alpha,
            beta, gamma, lr, epochs, batch_size, train_seed, sd_mil, cb, sd_cb, nms_threshold,
            eval_seed,
        );
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus_config().validate()?;
        self.model_config()?.validate()?;
        self.thresholds()?.validate()?;
        self.weights()?.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.nms_threshold) {
            return Err(Error::Config(format!(
                "nms_threshold = {} outside [0, 1]",
                self.nms_threshold
            )));
        }
        if self.sd_cb && !self.cb {
            return Err(Error::Config(
                "sd_cb requires the complementary branch (set cb = true)".into(),
            ));
        }
        Ok(())
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        CorpusConfig {
            train_episodes: self.train_episodes,
            test_episodes: self.test_episodes,
            n: self.n,
            d_v: self.d_v,
            num_events: self.num_events,
            n_p_min: self.n_p_min,
            n_p_max: self.n_p_max,
            min_span: self.min_span,
            max_span: self.max_span,
            sigma: self.sigma,
            clip_seconds: self.clip_seconds,
        }
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            n: self.n,
            d_s: self.d_s,
            d_v: self.d_v,
            d_f: self.d_f,
            tan_layers: self.tan_layers,
            tan_kernel: self.tan_kernel,
            encoder_layers: self.encoder_layers,
            map_backend: MapBackend::parse(&self.map_backend)?,
            map_activation: Activation::parse(&self.map_activation)?,
            tan_activation: Activation::parse(&self.tan_activation)?,
            cb_enabled: self.cb,
        })
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        let th = Thresholds { o_min: self.o_min, o_max: self.o_max };
        th.validate()?;
        Ok(th)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        let w = LossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma };
        w.validate()?;
        Ok(w)
    }

    /// All keys with current values, sorted by key; parseable back via
    /// `set`, so `defaults` output doubles as a starter config file. The
    /// exhaustive destructure makes the compiler reject any field that is
    /// missing from the listing.
    pub fn canonical_pairs(&self) -> Vec<(&'static str, String)> {
        let RunConfig {
            train_episodes,
            test_episodes,
            n,
            d_v,
            num_events,
            n_p_min,
            n_p_max,
            min_span,
            max_span,
            sigma,
            clip_seconds,
            data_seed,
            d_s,
            d_f,
            tan_layers,
            tan_kernel,
            encoder_layers,
            map_backend,
            map_activation,
            tan_activation,
            o_min,
            o_max,
            alpha,
            beta,
            gamma,
            lr,
            epochs,
            batch_size,
            train_seed,
            sd_mil,
            cb,
            sd_cb,
            nms_threshold,
            eval_seed,
        } = self;
        let mut pairs = vec![
            ("alpha", alpha.to_string()),
            ("batch_size", batch_size.to_string()),
            ("beta", beta.to_string()),
            ("cb", cb.to_string()),
            ("clip_seconds", clip_seconds.to_string()),
            ("d_f", d_f.to_string()),
            ("d_s", d_s.to_string()),
            ("d_v", d_v.to_string()),
            ("data_seed", data_seed.to_string()),
            ("encoder_layers", encoder_layers.to_string()),
            ("epochs", epochs.to_string()),
            ("eval_seed", eval_seed.to_string()),
            ("gamma", gamma.to_string()),
            ("lr", lr.to_string()),
            ("map_activation", map_activation.clone()),
            ("map_backend", map_backend.clone()),
            ("max_span", max_span.to_string()),
            ("min_span", min_span.to_string()),
            ("n", n.to_string()),
            ("n_p_max", n_p_max.to_string()),
            ("n_p_min", n_p_min.to_string()),
            ("nms_threshold", nms_threshold.to_string()),
            ("num_events", num_events.to_string()),
            ("o_max", o_max.to_string()),
            ("o_min", o_min.to_string()),
            ("sd_cb", sd_cb.to_string()),
            ("sd_mil", sd_mil.to_string()),
            ("sigma", sigma.to_string()),
            ("tan_activation", tan_activation.clone()),
            ("tan_kernel", tan_kernel.to_string()),
            ("tan_layers", tan_layers.to_string()),
            ("test_episodes", test_episodes.to_string()),
            ("train_episodes", train_episodes.to_string()),
            ("train_seed", train_seed.to_string()),
        ];
        pairs.sort_by_key(|(k, _)| *k);
        pairs
    }

    /// Stable hash of the keys that define artifact compatibility: corpus
    /// shape, data seed, and model architecture. Optimization settings,
    /// component toggles, and inference knobs are excluded on purpose, so
    /// ablations trained on one corpus stay evaluable against it; shape
    /// drift those toggles imply (a missing branch head) is still caught
    /// by the checkpoint's own tensor manifest.
    pub fn fingerprint(&self) -> String {
        const COMPAT_KEYS: &[&str] = &[
            "clip_seconds",
            "d_f",
            "d_s",
            "d_v",
            "data_seed",
            "encoder_layers",
            "map_activation",
            "map_backend",
            "max_span",
            "min_span",
            "n",
            "n_p_max",
            "n_p_min",
            "num_events",
            "sigma",
            "tan_activation",
            "tan_kernel",
            "tan_layers",
            "test_episodes",
            "train_episodes",
        ];
        let mut canon = String::new();
        for (key, value) in self.canonical_pairs() {
            if COMPAT_KEYS.contains(&key) {
                let _ = writeln!(canon, "{key}={value}");
            }
        }
        format!("{:016x}", fnv1a64(canon.as_bytes()))
    }
}

/// 64-bit FNV-1a over a byte string.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic sub-stream seed (splitmix64 finalizer over seed and salt)
/// so parameter init, pair sampling, and Monte Carlo draws never share an
/// RNG stream.
pub fn substream(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("learning_rate", "0.1").unwrap_err();
        assert!(err.to_string().contains("unknown config key"));
    }

    #[test]
    fn file_then_flags_override_in_order() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "# comment\n\nepochs = 3\nlr = 0.01").unwrap();
        let args = ConfigArgs {
            config: Some(file.path().to_path_buf()),
            lr: Some(0.02),
            ..ConfigArgs::default()
        };
        let cfg = RunConfig::resolve(&args).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 0.02);
    }

    #[test]
    fn duplicate_file_key_is_rejected() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "epochs = 3\nepochs = 4").unwrap();
        let args =
            ConfigArgs { config: Some(file.path().to_path_buf()), ..ConfigArgs::default() };
        let err = RunConfig::resolve(&args).unwrap_err();
        assert!(err.to_string().contains("duplicate config key"));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "epochs = 3\nnot a pair").unwrap();
        let args =
            ConfigArgs { config: Some(file.path().to_path_buf()), ..ConfigArgs::default() };
        let err = RunConfig::resolve(&args).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn canonical_pairs_round_trip_through_set() {
        let reference = RunConfig::default();
        let mut rebuilt = RunConfig::default();
        rebuilt.epochs = 999;
        for (key, value) in reference.canonical_pairs() {
            rebuilt.set(key, &value).unwrap();
        }
        assert_eq!(reference, rebuilt);
    }

    #[test]
    fn fingerprint_ignores_training_knobs_but_not_shape() {
        let base = RunConfig::default();
        let mut ablation = base.clone();
        ablation.sd_mil = false;
        ablation.cb = false;
        ablation.sd_cb = false;
        ablation.lr = 0.5;
        ablation.epochs = 1;
        assert_eq!(base.fingerprint(), ablation.fingerprint());

        let mut reshaped = base.clone();
        reshaped.d_f = base.d_f + 1;
        assert_ne!(base.fingerprint(), reshaped.fingerprint());

        let mut deepened = base.clone();
        deepened.tan_layers = base.tan_layers + 1;
        assert_ne!(base.fingerprint(), deepened.fingerprint());

        let mut reseeded = base.clone();
        reseeded.data_seed = 8;
        assert_ne!(base.fingerprint(), reseeded.fingerprint());
    }

    #[test]
    fn sd_cb_without_cb_is_rejected() {
        let mut cfg = RunConfig::default();
        cfg.cb = false;
        cfg.sd_cb = true;
        assert!(cfg.validate().is_err());
        cfg.sd_cb = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn fnv_vector() {
        // Published FNV-1a test vector.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}
