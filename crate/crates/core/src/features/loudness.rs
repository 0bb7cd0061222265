//! A-weighted frame loudness.

use crate::error::Result;
use crate::features::mel::check_audio;
use crate::features::stft::Stft;

#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_size: usize,
    /// Lower bound on weighted power before the log, so silence stays finite.
    pub power_floor: f64,
}

impl Default for LoudnessConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_fft: 2048,
            win_length: 2048,
            hop_size: 240,
            power_floor: 1e-10,
        }
    }
}

/// Natural log of A-weighted power, one value per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LoudnessContour {
    pub values: Vec<f64>,
}

fn a_weight_raw_db(f: f64) -> f64 {
    let f2 = f * f;
    let num = 12194.0f64.powi(2) * f2 * f2;
    let den = (f2 + 20.6f64.powi(2))
        * ((f2 + 107.7f64.powi(2)) * (f2 + 737.9f64.powi(2))).sqrt()
        * (f2 + 12194.0f64.powi(2));
    20.0 * (num / den).log10()
}

/// A-weighting gain in dB, shifted so that 1 kHz is exactly 0 dB.
pub fn a_weighting_db(f: f64) -> f64 {
    if f <= 0.0 {
        return f64::NEG_INFINITY;
    }
    a_weight_raw_db(f) - a_weight_raw_db(1000.0)
}

pub fn compute_loudness(wav: &[f64], sample_rate: u32, cfg: &LoudnessConfig) -> Result<LoudnessContour> {
    check_audio(wav, sample_rate, cfg.sample_rate)?;
    let stft = Stft::new(cfg.n_fft, cfg.win_length, cfg.hop_size)?;
    let weights: Vec<f64> = (0..stft.bins())
        .map(|k| {
            let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
            10f64.powf(a_weighting_db(f) / 10.0)
        })
        .collect();
    let values = stft
        .power(wav)
        .into_iter()
        .map(|frame| {
            let p: f64 = frame.iter().zip(&weights).map(|(p, w)| p * w).sum();
            p.max(cfg.power_floor).ln()
        })
        .collect();
    Ok(LoudnessContour { values })
}
