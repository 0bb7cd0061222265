//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! unknown or repeated keys are errors. Floats are written in Rust's shortest
//! round-trip form so parse → serialize → parse is lossless.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::trainer::TrainConfig;

/// Splits `text` into `(key, value)` pairs in file order.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
}

/// Sets one `train.*` or `model.*` key; `Ok(false)` if the key is not one.
pub fn apply_train_entry(cfg: &mut TrainConfig, key: &str, v: &str) -> Result<bool> {
    let m = &mut cfg.model;
    match key {
        "train.n_iter" => cfg.n_iter = value(key, v)?,
        "train.lr" => cfg.lr = value(key, v)?,
        "train.seed" => cfg.seed = value(key, v)?,
        "train.batch" => cfg.batch = value(key, v)?,
        "train.segment_frames" => cfg.segment_frames = value(key, v)?,
        "train.diffusion_steps" => cfg.diffusion_steps = value(key, v)?,
        "train.beta_start" => cfg.beta_start = value(key, v)?,
        "train.beta_end" => cfg.beta_end = value(key, v)?,
        "train.log_every" => cfg.log_every = value(key, v)?,
        "train.checkpoint_every" => cfg.checkpoint_every = value(key, v)?,
        "train.clip_norm" => cfg.clip_norm = value(key, v)?,
        "model.n_mels" => m.n_mels = value(key, v)?,
        "model.ppg_dim" => m.ppg_dim = value(key, v)?,
        "model.cond_dim" => m.cond_dim = value(key, v)?,
        "model.channels" => m.channels = value(key, v)?,
        "model.layers" => m.layers = value(key, v)?,
        "model.kernel_size" => m.kernel_size = value(key, v)?,
        "model.dilation" => m.dilation = value(key, v)?,
        "model.step_hidden" => m.step_hidden = value(key, v)?,
        "model.n_bins" => m.n_bins = value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn train_entries(cfg: &TrainConfig) -> Vec<(&'static str, String)> {
    let m = &cfg.model;
    vec![
        ("train.n_iter", cfg.n_iter.to_string()),
        ("train.lr", format!("{:?}", cfg.lr)),
        ("train.seed", cfg.seed.to_string()),
        ("train.batch", cfg.batch.to_string()),
        ("train.segment_frames", cfg.segment_frames.to_string()),
        ("train.diffusion_steps", cfg.diffusion_steps.to_string()),
        ("train.beta_start", format!("{:?}", cfg.beta_start)),
        ("train.beta_end", format!("{:?}", cfg.beta_end)),
        ("train.log_every", cfg.log_every.to_string()),
        ("train.checkpoint_every", cfg.checkpoint_every.to_string()),
        ("train.clip_norm", format!("{:?}", cfg.clip_norm)),
        ("model.n_mels", m.n_mels.to_string()),
        ("model.ppg_dim", m.ppg_dim.to_string()),
        ("model.cond_dim", m.cond_dim.to_string()),
        ("model.channels", m.channels.to_string()),
        ("model.layers", m.layers.to_string()),
        ("model.kernel_size", m.kernel_size.to_string()),
        ("model.dilation", m.dilation.to_string()),
        ("model.step_hidden", m.step_hidden.to_string()),
        ("model.n_bins", m.n_bins.to_string()),
    ]
}

fn apply_feature_entry(cfg: &mut FeatureConfig, key: &str, v: &str) -> Result<bool> {
    match key {
        "mel.sample_rate" => cfg.mel.sample_rate = value(key, v)?,
        "mel.n_fft" => cfg.mel.n_fft = value(key, v)?,
        "mel.win_length" => cfg.mel.win_length = value(key, v)?,
        "mel.hop_size" => cfg.mel.hop_size = value(key, v)?,
        "mel.n_mels" => cfg.mel.n_mels = value(key, v)?,
        "mel.f_min" => cfg.mel.f_min = value(key, v)?,
        "mel.f_max" => cfg.mel.f_max = value(key, v)?,
        "mel.log_floor" => cfg.mel.log_floor = value(key, v)?,
        "f0.f_min" => cfg.f0.f_min = value(key, v)?,
        "f0.f_max" => cfg.f0.f_max = value(key, v)?,
        "f0.window" => cfg.f0.window = value(key, v)?,
        "f0.threshold" => cfg.f0.threshold = value(key, v)?,
        "loudness.n_fft" => cfg.loudness.n_fft = value(key, v)?,
        "loudness.win_length" => cfg.loudness.win_length = value(key, v)?,
        "loudness.power_floor" => cfg.loudness.power_floor = value(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn feature_entries(cfg: &FeatureConfig) -> Vec<(&'static str, String)> {
    vec![
        ("mel.sample_rate", cfg.mel.sample_rate.to_string()),
        ("mel.n_fft", cfg.mel.n_fft.to_string()),
        ("mel.win_length", cfg.mel.win_length.to_string()),
        ("mel.hop_size", cfg.mel.hop_size.to_string()),
        ("mel.n_mels", cfg.mel.n_mels.to_string()),
        ("mel.f_min", format!("{:?}", cfg.mel.f_min)),
        ("mel.f_max", format!("{:?}", cfg.mel.f_max)),
        ("mel.log_floor", format!("{:?}", cfg.mel.log_floor)),
        ("f0.f_min", format!("{:?}", cfg.f0.f_min)),
        ("f0.f_max", format!("{:?}", cfg.f0.f_max)),
        ("f0.window", cfg.f0.window.to_string()),
        ("f0.threshold", format!("{:?}", cfg.f0.threshold)),
        ("loudness.n_fft", cfg.loudness.n_fft.to_string()),
        ("loudness.win_length", cfg.loudness.win_length.to_string()),
        ("loudness.power_floor", format!("{:?}", cfg.loudness.power_floor)),
    ]
}

/// Everything a command needs: training and model settings plus feature
/// analysis parameters. F0 and loudness analysis share the mel sample rate
/// and hop.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub features: FeatureConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, v) in parse_entries(text)? {
            if !apply_train_entry(&mut cfg.train, &k, &v)? && !apply_feature_entry(&mut cfg.features, &k, &v)? {
                return Err(Error::Config(format!("unknown key `{k}`")));
            }
        }
        cfg.sync_framing();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn sync_framing(&mut self) {
        let mel = &self.features.mel;
        self.features.f0.sample_rate = mel.sample_rate;
        self.features.f0.hop_size = mel.hop_size;
        self.features.loudness.sample_rate = mel.sample_rate;
        self.features.loudness.hop_size = mel.hop_size;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.features.validate()?;
        if self.train.model.n_mels != self.features.mel.n_mels {
            return Err(Error::Config(format!(
                "model.n_mels = {} but mel.n_mels = {}",
                self.train.model.n_mels, self.features.mel.n_mels
            )));
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (k, v) in train_entries(&self.train).into_iter().chain(feature_entries(&self.features)) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.serialize();
        let again = RunConfig::parse(&text).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.serialize(), text);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# toy\nmodel.n_mels = 16 # small\nmel.n_mels=16\n\ntrain.lr = 0.001\nmel.hop_size = 256\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.train.model.n_mels, 16);
        assert_eq!(cfg.train.lr, 0.001);
        assert_eq!(cfg.features.f0.hop_size, 256);
        assert_eq!(cfg.features.loudness.hop_size, 256);
        assert_eq!(RunConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nonsense.key = 1",
            "train.lr",
            "train.lr = fast",
            "train.lr = 1\ntrain.lr = 2",
            "model.n_mels = 16",
            "train.batch = 0",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn awkward_floats_survive() {
        let mut cfg = RunConfig::default();
        cfg.train.lr = 0.1 + 0.2;
        cfg.train.beta_end = 1.0 / 3.0;
        assert_eq!(RunConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }
}
