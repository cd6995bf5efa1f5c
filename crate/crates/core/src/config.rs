//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a complete configuration. Later assignments
//! (including command-line overrides) replace earlier ones.
//!
//! | key | default |
//! |-----|---------|
//! | `epochs` | 20 |
//! | `batch_size` | 16 |
//! | `peak_lr` | 3e-4 |
//! | `weight_decay` | 0.2 |
//! | `warmup_fraction` | 0.1 |
//! | `tau` | 0.07 |
//! | `alpha`, `beta` | 0.1, 0.05 |
//! | `adam_beta1`, `adam_beta2`, `adam_epsilon` | 0.9, 0.999, 1e-8 |
//! | `seed` | 0 |
//! | `context_mode` | long |
//! | `cst_enabled` | true |
//! | `prompt` | a photo of |
//! | `context_length` | 77 |
//! | `image_hidden`, `text_hidden` | 128 (comma-separated widths, may be empty) |
//! | `vocab_size` | 2048 |
//! | `token_dim` | 64 |
//! | `embed_dim` | 64 |
//! | `activation` | tanh |
//! | `probe_shots` | 1,4,16 |
//! | `probe_runs` | 10 |
//! | `top_k` | 5 |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::Activation;
use crate::error::{Error, Result};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub probe_shots: Vec<usize>,
    pub probe_runs: usize,
    pub top_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            probe_shots: vec![1, 4, 16],
            probe_runs: 10,
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn widths(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| num(key, w.trim())).collect()
}

fn list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 25] = [
        "epochs",
        "batch_size",
        "peak_lr",
        "weight_decay",
        "warmup_fraction",
        "tau",
        "alpha",
        "beta",
        "adam_beta1",
        "adam_beta2",
        "adam_epsilon",
        "seed",
        "context_mode",
        "cst_enabled",
        "prompt",
        "context_length",
        "image_hidden",
        "text_hidden",
        "vocab_size",
        "token_dim",
        "embed_dim",
        "activation",
        "probe_shots",
        "probe_runs",
        "top_k",
    ];

    /// Assigns one key. Range checks happen in [`RunConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let value = value.trim();
        match key {
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "peak_lr" => t.peak_lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "warmup_fraction" => t.warmup_fraction = num(key, value)?,
            "tau" => t.tau = num(key, value)?,
            "alpha" => t.alpha = num(key, value)?,
            "beta" => t.beta = num(key, value)?,
            "adam_beta1" => t.adam_beta1 = num(key, value)?,
            "adam_beta2" => t.adam_beta2 = num(key, value)?,
            "adam_epsilon" => t.adam_epsilon = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "context_mode" => t.context_mode = value.parse()?,
            "cst_enabled" => t.cst_enabled = boolean(key, value)?,
            "prompt" => t.prompt = value.to_string(),
            "context_length" => t.context_length = num(key, value)?,
            "image_hidden" => t.encoder.image_hidden = widths(key, value)?,
            "text_hidden" => t.encoder.text_hidden = widths(key, value)?,
            "vocab_size" => t.encoder.vocab_size = num(key, value)?,
            "token_dim" => t.encoder.token_dim = num(key, value)?,
            "embed_dim" => t.encoder.embed_dim = num(key, value)?,
            "activation" => {
                t.encoder.activation = match value {
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    _ => return Err(Error::Config(format!("`activation`: unknown activation `{value}`"))),
                }
            }
            "probe_shots" => self.eval.probe_shots = widths(key, value)?,
            "probe_runs" => self.eval.probe_runs = num(key, value)?,
            "top_k" => self.eval.top_k = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in [`RunConfig::KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        let e = &t.encoder;
        let values = [
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.peak_lr.to_string(),
            t.weight_decay.to_string(),
            t.warmup_fraction.to_string(),
            t.tau.to_string(),
            t.alpha.to_string(),
            t.beta.to_string(),
            t.adam_beta1.to_string(),
            t.adam_beta2.to_string(),
            t.adam_epsilon.to_string(),
            t.seed.to_string(),
            t.context_mode.to_string(),
            t.cst_enabled.to_string(),
            t.prompt.clone(),
            t.context_length.to_string(),
            list(&e.image_hidden),
            list(&e.text_hidden),
            e.vocab_size.to_string(),
            e.token_dim.to_string(),
            e.embed_dim.to_string(),
            match e.activation {
                Activation::Tanh => "tanh".into(),
                Activation::Identity => "identity".into(),
            },
            list(&self.eval.probe_shots),
            self.eval.probe_runs.to_string(),
            self.eval.top_k.to_string(),
        ];
        Self::KEYS.into_iter().zip(values).collect()
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Hex SHA-256 prefix of [`RunConfig::render`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .take(8)
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    pub fn validate(&self) -> Result<()> {
        self.train
            .validate()
            .and_then(|()| self.train.encoder.validate())
            .map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })?;
        if self.eval.probe_runs == 0 || self.eval.top_k == 0 || self.eval.probe_shots.contains(&0) {
            return Err(Error::Config("probe_runs, top_k and probe_shots must be >= 1".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the current values, without validating.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }
}

/// Defaults, then the file (if any), then `overrides` in order; the result is validated.
pub fn parse_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = path {
        let text = fs::read_to_string(p).map_err(|e| Error::io(format!("reading config {}", p.display()), e))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    cfg.apply_text(text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::ContextMode;

    #[test]
    fn empty_file_gives_defaults() {
        let c = parse_config_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        let t = &c.train;
        assert_eq!((t.alpha, t.beta, t.tau, t.weight_decay, t.epochs), (0.1, 0.05, 0.07, 0.2, 20));
    }

    #[test]
    fn flag_overrides_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "# comment\nalpha = 0.1\nepochs=3\n").unwrap();
        let c = parse_config(Some(&path), &[("alpha".into(), "0.2".into())]).unwrap();
        assert_eq!(c.train.alpha, 0.2);
        assert_eq!(c.train.epochs, 3);
    }

    #[test]
    fn out_of_range_and_unknown_keys() {
        assert!(matches!(parse_config_str("alpha = 1.5"), Err(Error::Config(_))));
        match parse_config_str("learning_rate = 0.1") {
            Err(Error::Config(m)) => assert!(m.contains("learning_rate")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config_str("epochs = many"), Err(Error::Config(_))));
        assert!(matches!(parse_config_str("epochs"), Err(Error::Config(_))));
        assert!(matches!(parse_config_str("warmup_fraction = 0"), Err(Error::Config(_))));
        assert!(matches!(parse_config_str("embed_dim = 0"), Err(Error::Config(_))));
    }

    #[test]
    fn render_round_trips() {
        let mut c = RunConfig::default();
        c.set("context_mode", "short").unwrap();
        c.set("image_hidden", "").unwrap();
        c.set("text_hidden", "32, 16").unwrap();
        c.set("peak_lr", "0.003").unwrap();
        c.set("prompt", "a leaf of").unwrap();
        let back = parse_config_str(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.train.context_mode, ContextMode::Short);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hash_tracks_every_key() {
        let base = RunConfig::default();
        let mut hashes = std::collections::HashSet::new();
        hashes.insert(base.hash());
        for (k, v) in base.entries() {
            let mut c = base.clone();
            let changed = match k {
                "context_mode" => "short".to_string(),
                "cst_enabled" => "false".to_string(),
                "activation" => "identity".to_string(),
                "prompt" => "x".to_string(),
                "image_hidden" | "text_hidden" | "probe_shots" => "2".to_string(),
                _ => format!("{v}1"),
            };
            c.set(k, &changed).unwrap();
            assert!(hashes.insert(c.hash()), "{k}");
        }
        assert_eq!(base.hash().len(), 16);
    }
}
