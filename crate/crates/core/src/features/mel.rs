//! Log-mel spectrograms and their corpus min-max normalization.

use crate::error::{Error, Result};
use crate::features::stft::Stft;

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Added to mel power before the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            n_fft: 1024,
            win_length: 1024,
            hop_size: 240,
            n_mels: 80,
            f_min: 0.0,
            f_max: 12_000.0,
            log_floor: 1e-5,
        }
    }
}

/// Range used to map log-mel values onto `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MelStats {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MelScale {
    /// Natural log of floored mel power.
    Log,
    /// Min-max normalized; the statistics are needed to undo it.
    Normalized(Option<MelStats>),
}

/// `frames × n_mels`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub frames: usize,
    pub n_mels: usize,
    pub hop_size: usize,
    pub sample_rate: u32,
    pub scale: MelScale,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, hop_size: usize, sample_rate: u32, scale: MelScale) -> Result<Self> {
        if n_mels == 0 || !values.len().is_multiple_of(n_mels) {
            return Err(Error::Input(format!(
                "{} values do not form rows of {n_mels} mel bins",
                values.len()
            )));
        }
        Ok(Self {
            frames: values.len() / n_mels,
            values,
            n_mels,
            hop_size,
            sample_rate,
            scale,
        })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn normalized(&self, stats: &MelStats) -> Result<Self> {
        if self.scale != MelScale::Log {
            return Err(Error::State("mel spectrogram is already normalized".into()));
        }
        let values = self.values.iter().map(|&v| stats.normalize(v)).collect();
        Ok(Self {
            values,
            scale: MelScale::Normalized(Some(*stats)),
            ..*self
        })
    }

    /// The log-mel values, undoing normalization if needed.
    pub fn to_log(&self) -> Result<Self> {
        match self.scale {
            MelScale::Log => Ok(self.clone()),
            MelScale::Normalized(Some(stats)) => Ok(Self {
                values: self.values.iter().map(|&v| stats.denormalize(v)).collect(),
                scale: MelScale::Log,
                ..*self
            }),
            MelScale::Normalized(None) => Err(Error::State(
                "normalized mel spectrogram carries no statistics to denormalize".into(),
            )),
        }
    }
}

impl MelStats {
    /// Min and max over every value of every log-mel in the corpus. A
    /// degenerate range is widened upward by 1 so the minimum still maps to −1.
    pub fn from_corpus<'a>(mels: impl IntoIterator<Item = &'a MelSpectrogram>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for m in mels {
            if m.scale != MelScale::Log {
                return Err(Error::State("corpus statistics need log-scale mels".into()));
            }
            for &v in &m.values {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() || !max.is_finite() {
            return Err(Error::Input("empty corpus".into()));
        }
        if max <= min {
            max = min + 1.0;
        }
        Ok(Self { min, max })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min) * 2.0 - 1.0).clamp(-1.0, 1.0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        (v + 1.0) * 0.5 * (self.max - self.min) + self.min
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let logstep = 6.4f64.ln() / 27.0;
    if hz < MIN_LOG_HZ {
        hz / F_SP
    } else {
        MIN_LOG_HZ / F_SP + (hz / MIN_LOG_HZ).ln() / logstep
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = 6.4f64.ln() / 27.0;
    if mel < min_log_mel {
        mel * F_SP
    } else {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    }
}

/// Triangular filters on the Slaney mel scale with area normalization
/// (`2 / bandwidth`). Returns `n_mels` rows of `n_fft/2 + 1` weights.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize, f_min: f64, f_max: f64) -> Vec<Vec<f64>> {
    let bins = n_fft / 2 + 1;
    let fft_freqs: Vec<f64> = (0..bins).map(|k| k as f64 * sample_rate as f64 / n_fft as f64).collect();
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let enorm = 2.0 / (right - left);
            fft_freqs
                .iter()
                .map(|&f| {
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0) * enorm
                })
                .collect()
        })
        .collect()
}

/// Center frequency in Hz of each mel filter.
pub fn mel_centers(n_mels: usize, f_min: f64, f_max: f64) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    (1..=n_mels)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

pub(crate) fn check_audio(wav: &[f64], sample_rate: u32, expected: u32) -> Result<()> {
    if wav.is_empty() {
        return Err(Error::Input("empty audio".into()));
    }
    if sample_rate != expected {
        return Err(Error::Input(format!(
            "sample rate {sample_rate} Hz does not match configured {expected} Hz"
        )));
    }
    Ok(())
}

/// Log-mel spectrogram of mono samples, `ceil(len / hop)` frames.
pub fn compute_mel(wav: &[f64], sample_rate: u32, cfg: &MelConfig) -> Result<MelSpectrogram> {
    check_audio(wav, sample_rate, cfg.sample_rate)?;
    if cfg.f_max > cfg.sample_rate as f64 / 2.0 || cfg.f_min < 0.0 || cfg.f_min >= cfg.f_max {
        return Err(Error::Config(format!("invalid mel band {}..{} Hz", cfg.f_min, cfg.f_max)));
    }
    let stft = Stft::new(cfg.n_fft, cfg.win_length, cfg.hop_size)?;
    let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max);
    let mut values = Vec::new();
    for frame in stft.power(wav) {
        for filter in &fb {
            let p: f64 = filter.iter().zip(&frame).map(|(w, p)| w * p).sum();
            values.push((p + cfg.log_floor).ln());
        }
    }
    MelSpectrogram::new(values, cfg.n_mels, cfg.hop_size, cfg.sample_rate, MelScale::Log)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, secs: f64, sr: u32) -> Vec<f64> {
        let n = (secs * sr as f64) as usize;
        (0..n)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn one_second_gives_one_hundred_frames() {
        let cfg = MelConfig::default();
        let mel = compute_mel(&sine(440.0, 1.0, 24_000), 24_000, &cfg).unwrap();
        assert_eq!(mel.frames, 100);
        assert_eq!(mel.n_mels, 80);
    }

    #[test]
    fn sine_peak_bin_constant_and_matches_filter_centers() {
        let cfg = MelConfig::default();
        // cosine phase: reflect padding of a zero-phase sine puts a slope
        // discontinuity in the first frame
        let tone: Vec<f64> = (0..12_000)
            .map(|i| 0.5 * (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 24_000.0).cos())
            .collect();
        let mel = compute_mel(&tone, 24_000, &cfg).unwrap();
        let argmax = |row: &[f64]| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        let peaks: Vec<usize> = (0..mel.frames).map(|t| argmax(mel.frame(t))).collect();
        assert!(peaks.iter().all(|&p| p == peaks[0]), "{peaks:?}");
        // oracle: the filter whose center is nearest 1 kHz
        let centers = mel_centers(80, 0.0, 12_000.0);
        let nearest = argmax(&centers.iter().map(|c| -(c - 1000.0).abs()).collect::<Vec<_>>());
        assert!(peaks[0].abs_diff(nearest) <= 1, "peak {} nearest {nearest}", peaks[0]);
    }

    #[test]
    fn silence_is_log_floor_and_normalizes_to_minus_one() {
        let cfg = MelConfig::default();
        let silent = compute_mel(&vec![0.0; 4800], 24_000, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(silent.values.iter().all(|&v| (v - floor).abs() < 1e-12));
        let loud = compute_mel(&sine(300.0, 0.2, 24_000), 24_000, &cfg).unwrap();
        let stats = MelStats::from_corpus([&silent, &loud]).unwrap();
        let norm = silent.normalized(&stats).unwrap();
        assert!(norm.values.iter().all(|&v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn corpus_normalization_hits_both_ends() {
        let cfg = MelConfig::default();
        let a = compute_mel(&sine(300.0, 0.2, 24_000), 24_000, &cfg).unwrap();
        let b = compute_mel(&sine(2000.0, 0.1, 24_000), 24_000, &cfg).unwrap();
        let stats = MelStats::from_corpus([&a, &b]).unwrap();
        let all: Vec<f64> = [a.normalized(&stats).unwrap(), b.normalized(&stats).unwrap()]
            .iter()
            .flat_map(|m| m.values.clone())
            .collect();
        let min = all.iter().copied().fold(f64::INFINITY, f64::min);
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(min, -1.0);
        assert_eq!(max, 1.0);
    }

    #[test]
    fn input_errors() {
        let cfg = MelConfig::default();
        assert!(matches!(compute_mel(&[], 24_000, &cfg), Err(Error::Input(_))));
        assert!(matches!(compute_mel(&[0.1; 100], 16_000, &cfg), Err(Error::Input(_))));
    }

    #[test]
    fn denormalize_needs_stats() {
        let m = MelSpectrogram::new(vec![0.0; 8], 4, 240, 24_000, MelScale::Normalized(None)).unwrap();
        assert!(matches!(m.to_log(), Err(Error::State(_))));
    }

    #[test]
    fn mel_scale_round_trip() {
        for hz in [0.0, 120.0, 999.0, 1000.0, 4500.0, 12_000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }
}
