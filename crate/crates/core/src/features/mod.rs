//! Acoustic feature extraction: log-mel spectrograms, F0, A-weighted
//! loudness, contour quantization and PPG ingestion.
//!
//! Every analysis uses the same hop and centered framing, so all features of
//! one utterance have `ceil(samples / hop)` frames.

pub mod f0;
pub mod invert;
pub mod io;
pub mod loudness;
pub mod mel;
pub mod ppg;
pub mod quantize;
pub mod stft;

pub use f0::{estimate_f0, median_f0, F0Config, F0Contour};
pub use invert::invert_mel;
pub use io::{read_wav, write_wav, FeatureArray};
pub use loudness::{a_weighting_db, compute_loudness, LoudnessConfig, LoudnessContour};
pub use mel::{compute_mel, MelConfig, MelScale, MelSpectrogram, MelStats};
pub use ppg::{load_ppg, synth_ppg, PpgSequence, DEFAULT_PPG_DIM};
pub use quantize::{quantize, QuantRange, QuantizedContour, DEFAULT_BINS};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureConfig {
    pub mel: MelConfig,
    pub f0: F0Config,
    pub loudness: LoudnessConfig,
}

impl FeatureConfig {
    /// Rejects configurations whose analyses would disagree on framing.
    pub fn validate(&self) -> Result<()> {
        let rates = [self.mel.sample_rate, self.f0.sample_rate, self.loudness.sample_rate];
        let hops = [self.mel.hop_size, self.f0.hop_size, self.loudness.hop_size];
        if rates.iter().any(|&r| r != rates[0]) || hops.iter().any(|&h| h != hops[0]) {
            return Err(Error::Config(format!(
                "feature analyses must share sample rate and hop (rates {rates:?}, hops {hops:?})"
            )));
        }
        Ok(())
    }
}

/// The target-side features of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub mel: MelSpectrogram,
    pub f0: F0Contour,
    pub loudness: LoudnessContour,
}

/// Runs all analyses on one waveform. `extra_f0` contours from other
/// estimators are fused with the built-in estimate by [`median_f0`].
pub fn extract(wav: &[f64], sample_rate: u32, cfg: &FeatureConfig, extra_f0: &[F0Contour]) -> Result<UtteranceFeatures> {
    cfg.validate()?;
    let mel = compute_mel(wav, sample_rate, &cfg.mel)?;
    let own = estimate_f0(wav, &cfg.f0)?;
    let f0 = if extra_f0.is_empty() {
        own
    } else {
        let mut all = vec![own];
        all.extend_from_slice(extra_f0);
        median_f0(&all)?
    };
    let loudness = compute_loudness(wav, sample_rate, &cfg.loudness)?;
    debug_assert_eq!(mel.frames, loudness.values.len());
    if f0.len() != mel.frames {
        return Err(Error::Input(format!(
            "F0 contour has {} frames, mel has {}",
            f0.len(),
            mel.frames
        )));
    }
    Ok(UtteranceFeatures { mel, f0, loudness })
}
