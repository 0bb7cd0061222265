//! Phonetic posteriorgram ingestion and a synthetic stand-in generator.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::io::FeatureArray;
use crate::rng::SeededRng;

pub const DEFAULT_PPG_DIM: usize = 218;

/// `frames × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgSequence {
    pub values: Vec<f64>,
    pub frames: usize,
    pub dim: usize,
}

impl PpgSequence {
    pub fn new(values: Vec<f64>, frames: usize, dim: usize) -> Result<Self> {
        if values.len() != frames * dim {
            return Err(Error::dim("ppg", &[frames, dim], &[values.len()]));
        }
        Ok(Self { values, frames, dim })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            values: self.values[start * self.dim..(start + len) * self.dim].to_vec(),
            frames: len,
            dim: self.dim,
        }
    }

    pub fn to_feature(&self) -> FeatureArray {
        FeatureArray::from_f64(&[self.frames, self.dim], &self.values).expect("consistent dims")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_feature().save(path)
    }
}

pub fn load_ppg(path: impl AsRef<Path>) -> Result<PpgSequence> {
    let feat = FeatureArray::load(path)?;
    let (frames, dim) = feat.dims2()?;
    PpgSequence::new(feat.to_f64(), frames, dim)
}

/// Smoothly varying softmax rows: Gaussian logits are low-pass filtered over
/// time (first-order recursion), sharpened, then normalized per frame.
pub fn synth_ppg(frames: usize, dim: usize, seed: u64) -> Result<PpgSequence> {
    if frames == 0 || dim == 0 {
        return Err(Error::Config(format!("synthetic PPG needs frames, dim > 0 (got {frames}, {dim})")));
    }
    const SMOOTHING: f64 = 0.8;
    const SHARPNESS: f64 = 4.0;
    let mut rng = SeededRng::new(seed);
    let mut state = vec![0.0; dim];
    rng.fill_normal(&mut state);
    let mut fresh = vec![0.0; dim];
    let mut values = Vec::with_capacity(frames * dim);
    for _ in 0..frames {
        rng.fill_normal(&mut fresh);
        for (s, f) in state.iter_mut().zip(&fresh) {
            *s = SMOOTHING * *s + (1.0 - SMOOTHING * SMOOTHING).sqrt() * f;
        }
        let max = state.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = state.iter().map(|s| (SHARPNESS * (s - max)).exp()).collect();
        let z: f64 = exps.iter().sum();
        values.extend(exps.iter().map(|e| e / z));
    }
    PpgSequence::new(values, frames, dim)
}
