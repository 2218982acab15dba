//! Flat `key=value` run configuration.
//!
//! Defaults reproduce the published experimental setup: hidden 200,
//! latent 200, embedding 150, dropout 0.2, Adam at 0.001 for 10 epochs,
//! and reward constants k=100, b=25 with target Silhouette 0.55 within
//! 500 agent steps. Overrides given on the command line win over the file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::model::ModelDims;
use crate::tensor::Precision;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot parse `{value}` as {expected}")]
    Parse {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config key `{key}`: {constraint}")]
    Range { key: String, constraint: &'static str },
    #[error("config line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub k: f64,
    pub b: f64,
    pub target: f64,
    /// Total agent steps across all episodes.
    pub max_steps: usize,
    /// Steps before the environment resets the classifier.
    pub episode_len: usize,
    pub lr: f64,
    pub batch: usize,
    pub buffer: usize,
    pub gamma: f64,
    pub tau: f64,
    pub hidden: usize,
    /// Uniform-random steps before the policy takes over.
    pub learning_starts: usize,
    pub silhouette_sample: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            k: 100.0,
            b: 25.0,
            target: 0.55,
            max_steps: 500,
            episode_len: 100,
            lr: 3e-4,
            batch: 64,
            buffer: 10_000,
            gamma: 0.99,
            tau: 0.005,
            hidden: 64,
            learning_starts: 100,
            silhouette_sample: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub hidden: usize,
    pub latent: usize,
    pub embed: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub n_filters: usize,
    pub seed: u64,
    pub precision: Precision,
    pub max_len: usize,
    /// `synthetic`, or a path to a TAB-separated training file.
    pub corpus: String,
    /// Validation file; required when `corpus` is a path.
    pub valid_corpus: String,
    pub train_size: usize,
    pub valid_size: usize,
    pub mix: f64,
    pub rl: bool,
    pub out_dir: PathBuf,
    pub sac: SacConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hidden: 200,
            latent: 200,
            embed: 150,
            dropout: 0.2,
            lr: 0.001,
            epochs: 10,
            batch_size: 16,
            patience: 3,
            n_filters: 2,
            seed: 0,
            precision: Precision::F64,
            max_len: 30,
            corpus: "synthetic".into(),
            valid_corpus: String::new(),
            train_size: 480,
            valid_size: 120,
            mix: 0.5,
            rl: true,
            out_dir: PathBuf::from("lms2s_out"),
            sac: SacConfig::default(),
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "hidden",
    "latent",
    "embed",
    "dropout",
    "lr",
    "epochs",
    "batch_size",
    "patience",
    "n_filters",
    "seed",
    "precision",
    "max_len",
    "corpus",
    "valid_corpus",
    "train_size",
    "valid_size",
    "mix",
    "rl",
    "out_dir",
    "k",
    "b",
    "target",
    "max_steps",
    "episode_len",
    "sac_lr",
    "sac_batch",
    "sac_buffer",
    "sac_gamma",
    "sac_tau",
    "sac_hidden",
    "learning_starts",
    "silhouette_sample",
];

fn parse<T: FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::Parse {
        key: key.into(),
        value: value.into(),
        expected,
    })
}

fn positive(key: &str, v: usize) -> Result<usize, ConfigError> {
    if v == 0 {
        return Err(ConfigError::Range {
            key: key.into(),
            constraint: "must be at least 1",
        });
    }
    Ok(v)
}

fn range(key: &str, ok: bool, constraint: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Range {
            key: key.into(),
            constraint,
        })
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let int = |v: &str| parse::<usize>(key, v, "a non-negative integer");
        let real = |v: &str| parse::<f64>(key, v, "a number");
        match key {
            "hidden" => self.hidden = positive(key, int(value)?)?,
            "latent" => self.latent = positive(key, int(value)?)?,
            "embed" => self.embed = positive(key, int(value)?)?,
            "dropout" => {
                let v = real(value)?;
                range(key, (0.0..1.0).contains(&v), "must lie in [0, 1)")?;
                self.dropout = v;
            }
            "lr" => {
                let v = real(value)?;
                range(key, v >= 0.0 && v.is_finite(), "must be a finite value >= 0")?;
                self.lr = v;
            }
            "epochs" => self.epochs = int(value)?,
            "batch_size" => self.batch_size = positive(key, int(value)?)?,
            "patience" => self.patience = positive(key, int(value)?)?,
            "n_filters" => self.n_filters = positive(key, int(value)?)?,
            "seed" => self.seed = parse(key, value, "an unsigned 64-bit integer")?,
            "precision" => {
                self.precision = match value.trim() {
                    "f64" => Precision::F64,
                    "f32" => Precision::F32,
                    _ => {
                        return Err(ConfigError::Parse {
                            key: key.into(),
                            value: value.into(),
                            expected: "`f64` or `f32`",
                        })
                    }
                }
            }
            "max_len" => self.max_len = positive(key, int(value)?)?,
            "corpus" => self.corpus = value.trim().to_string(),
            "valid_corpus" => self.valid_corpus = value.trim().to_string(),
            "train_size" => {
                let v = int(value)?;
                range(key, v >= 2, "must be at least 2")?;
                self.train_size = v;
            }
            "valid_size" => {
                let v = int(value)?;
                range(key, v >= 2, "must be at least 2")?;
                self.valid_size = v;
            }
            "mix" => {
                let v = real(value)?;
                range(key, v > 0.0 && v < 1.0, "must lie in (0, 1)")?;
                self.mix = v;
            }
            "rl" => self.rl = parse(key, value, "`true` or `false`")?,
            "out_dir" => self.out_dir = PathBuf::from(value.trim()),
            "k" => self.sac.k = real(value)?,
            "b" => self.sac.b = real(value)?,
            "target" => {
                let v = real(value)?;
                range(key, (-1.0..=1.0).contains(&v), "must lie in [-1, 1]")?;
                self.sac.target = v;
            }
            "max_steps" => self.sac.max_steps = int(value)?,
            "episode_len" => self.sac.episode_len = positive(key, int(value)?)?,
            "sac_lr" => {
                let v = real(value)?;
                range(key, v >= 0.0 && v.is_finite(), "must be a finite value >= 0")?;
                self.sac.lr = v;
            }
            "sac_batch" => self.sac.batch = positive(key, int(value)?)?,
            "sac_buffer" => self.sac.buffer = positive(key, int(value)?)?,
            "sac_gamma" => {
                let v = real(value)?;
                range(key, (0.0..=1.0).contains(&v), "must lie in [0, 1]")?;
                self.sac.gamma = v;
            }
            "sac_tau" => {
                let v = real(value)?;
                range(key, (0.0..=1.0).contains(&v), "must lie in [0, 1]")?;
                self.sac.tau = v;
            }
            "sac_hidden" => self.sac.hidden = positive(key, int(value)?)?,
            "learning_starts" => self.sac.learning_starts = int(value)?,
            "silhouette_sample" => {
                let v = int(value)?;
                range(key, v >= 2, "must be at least 2")?;
                self.sac.silhouette_sample = v;
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.sac;
        Some(match key {
            "hidden" => self.hidden.to_string(),
            "latent" => self.latent.to_string(),
            "embed" => self.embed.to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patience" => self.patience.to_string(),
            "n_filters" => self.n_filters.to_string(),
            "seed" => self.seed.to_string(),
            "precision" => match self.precision {
                Precision::F64 => "f64".into(),
                Precision::F32 => "f32".into(),
            },
            "max_len" => self.max_len.to_string(),
            "corpus" => self.corpus.clone(),
            "valid_corpus" => self.valid_corpus.clone(),
            "train_size" => self.train_size.to_string(),
            "valid_size" => self.valid_size.to_string(),
            "mix" => self.mix.to_string(),
            "rl" => self.rl.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "k" => s.k.to_string(),
            "b" => s.b.to_string(),
            "target" => s.target.to_string(),
            "max_steps" => s.max_steps.to_string(),
            "episode_len" => s.episode_len.to_string(),
            "sac_lr" => s.lr.to_string(),
            "sac_batch" => s.batch.to_string(),
            "sac_buffer" => s.buffer.to_string(),
            "sac_gamma" => s.gamma.to_string(),
            "sac_tau" => s.tau.to_string(),
            "sac_hidden" => s.hidden.to_string(),
            "learning_starts" => s.learning_starts.to_string(),
            "silhouette_sample" => s.silhouette_sample.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v.trim())
    }

    /// Effective configuration, one `key=value` line per key.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k}={}", self.get(k).expect("listed key"));
        }
        out
    }

    pub fn dims(&self, vocab: usize) -> ModelDims {
        ModelDims {
            vocab,
            embed: self.embed,
            hidden: self.hidden,
            latent: self.latent,
            clusters: self.n_filters,
        }
    }
}

/// Defaults, then the optional file, then each override in order.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = PipelineConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| ConfigError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
        cfg.apply_text(&text)?;
    }
    for o in overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_published_defaults() {
        let mut c = PipelineConfig::default();
        c.apply_text("").unwrap();
        assert_eq!((c.hidden, c.latent, c.embed), (200, 200, 150));
        assert_eq!((c.dropout, c.lr, c.epochs), (0.2, 0.001, 10));
        assert_eq!(
            (c.sac.k, c.sac.b, c.sac.target, c.sac.max_steps),
            (100.0, 25.0, 0.55, 500)
        );
    }

    #[test]
    fn override_wins() {
        let mut c = PipelineConfig::default();
        c.apply_text("epochs=5\n").unwrap();
        c.apply_override("epochs=2").unwrap();
        assert_eq!(c.epochs, 2);
        assert_eq!(c.hidden, 200);
    }

    #[test]
    fn errors_name_the_key() {
        let mut c = PipelineConfig::default();
        let e = c.set("dropout", "1.5").unwrap_err();
        assert!(matches!(&e, ConfigError::Range { key, .. } if key == "dropout"));
        let e = c.set("epochs", "ten").unwrap_err();
        assert!(e.to_string().contains("epochs"));
        assert_eq!(c.set("bogus", "1"), Err(ConfigError::UnknownKey("bogus".into())));
    }

    #[test]
    fn echo_lists_every_key_once_and_round_trips() {
        let mut c = PipelineConfig::default();
        c.apply_text("seed=9\nprecision=f32\nrl=false\nout_dir=x/y\n").unwrap();
        let echo = c.echo();
        for k in KEYS {
            assert_eq!(
                echo.lines().filter(|l| l.split('=').next() == Some(k)).count(),
                1,
                "{k}"
            );
        }
        let mut back = PipelineConfig::default();
        back.apply_text(&echo).unwrap();
        assert_eq!(back, c);
    }
}
