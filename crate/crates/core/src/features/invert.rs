//! Rough waveform reconstruction from a mel spectrogram, for listening checks.
//!
//! Mel power is mapped back to linear-frequency magnitude with the
//! pseudo-inverse of the filterbank, then phase is recovered by Griffin-Lim
//! iterations.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::features::mel::{mel_filterbank, MelConfig, MelSpectrogram};
use crate::features::stft::Stft;

pub fn invert_mel(mel: &MelSpectrogram, cfg: &MelConfig, iterations: usize) -> Result<Vec<f64>> {
    let log = mel.to_log()?;
    if log.n_mels != cfg.n_mels {
        return Err(Error::Config(format!(
            "mel has {} bins but the config expects {}",
            log.n_mels, cfg.n_mels
        )));
    }
    let stft = Stft::new(cfg.n_fft, cfg.win_length, cfg.hop_size)?;
    let fb = mel_filterbank(cfg.sample_rate, cfg.n_fft, cfg.n_mels, cfg.f_min, cfg.f_max);
    let bins = stft.bins();
    let fb = DMatrix::from_fn(cfg.n_mels, bins, |m, k| fb[m][k]);
    let pinv = fb
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::State(format!("filterbank pseudo-inverse failed: {e}")))?;

    let magnitudes: Vec<Vec<f64>> = (0..log.frames)
        .map(|t| {
            let power = DMatrix::from_iterator(
                cfg.n_mels,
                1,
                log.frame(t).iter().map(|&v| (v.exp() - cfg.log_floor).max(0.0)),
            );
            let linear = &pinv * power;
            linear.iter().map(|&p| p.max(0.0).sqrt()).collect()
        })
        .collect();

    let len = log.frames * cfg.hop_size;
    // deterministic initial phase
    let mut spec: Vec<Vec<Complex64>> = magnitudes
        .iter()
        .enumerate()
        .map(|(t, mags)| {
            mags.iter()
                .enumerate()
                .map(|(k, &m)| Complex64::from_polar(m, ((t * 31 + k * 17) % 628) as f64 / 100.0))
                .collect()
        })
        .collect();
    let mut wav = stft.synthesize(&spec, len);
    for _ in 0..iterations {
        let rebuilt = stft.analyze(&wav);
        for ((frame, mags), est) in spec.iter_mut().zip(&magnitudes).zip(&rebuilt) {
            for ((c, &m), e) in frame.iter_mut().zip(mags).zip(est) {
                let norm = e.norm();
                *c = if norm > 1e-12 { e * (m / norm) } else { Complex64::new(m, 0.0) };
            }
        }
        wav = stft.synthesize(&spec, len);
    }
    Ok(wav)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::mel::{compute_mel, MelScale, MelStats};

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn round_trip_correlates_per_frame() {
        let cfg = MelConfig::default();
        let wav: Vec<f64> = (0..12_000)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 24_000.0).sin())
            .collect();
        let mel = compute_mel(&wav, 24_000, &cfg).unwrap();
        let stats = MelStats::from_corpus([&mel]).unwrap();
        let norm = mel.normalized(&stats).unwrap();
        let audio = invert_mel(&norm, &cfg, 16).unwrap();
        assert_eq!(audio.len(), mel.frames * cfg.hop_size);
        let again = compute_mel(&audio, 24_000, &cfg).unwrap();
        for t in 0..mel.frames {
            let r = pearson(mel.frame(t), again.frame(t));
            assert!(r >= 0.7, "frame {t}: r = {r}");
        }
    }

    #[test]
    fn silence_inverts_to_near_silence() {
        let cfg = MelConfig::default();
        let mel = MelSpectrogram::new(vec![cfg.log_floor.ln(); 10 * 80], 80, 240, 24_000, MelScale::Log).unwrap();
        let audio = invert_mel(&mel, &cfg, 4).unwrap();
        assert_eq!(audio.len(), 2400);
        assert!(audio.iter().all(|s| s.abs() < 0.01));
    }

    #[test]
    fn normalized_without_stats_is_state_error() {
        let cfg = MelConfig::default();
        let mel = MelSpectrogram::new(vec![0.0; 80], 80, 240, 24_000, MelScale::Normalized(None)).unwrap();
        assert!(matches!(invert_mel(&mel, &cfg, 1), Err(Error::State(_))));
    }
}
