//! Centered short-time Fourier transform and its overlap-add inverse.
//!
//! Frame `t` is centered on sample `t * hop`; samples outside the signal are
//! read by reflection about the edges. A signal of `n` samples yields
//! `ceil(n / hop)` frames.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub fn frame_count(samples: usize, hop: usize) -> usize {
    samples.div_ceil(hop)
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Maps any integer index into `0..len` by mirroring about the end samples
/// (the edge sample is not repeated).
pub fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

pub struct Stft {
    n_fft: usize,
    hop: usize,
    /// Window zero-padded and centered to `n_fft` samples.
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(n_fft: usize, win_length: usize, hop: usize) -> Result<Self> {
        if n_fft == 0 || hop == 0 || win_length == 0 || win_length > n_fft {
            return Err(Error::Config(format!(
                "invalid STFT geometry: n_fft={n_fft}, win_length={win_length}, hop={hop}"
            )));
        }
        let mut window = vec![0.0; n_fft];
        let offset = (n_fft - win_length) / 2;
        window[offset..offset + win_length].copy_from_slice(&hann(win_length));
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_fft,
            hop,
            window,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// One-sided complex spectra, one per frame.
    pub fn analyze(&self, signal: &[f64]) -> Vec<Vec<Complex64>> {
        let frames = frame_count(signal.len(), self.hop);
        let half = (self.n_fft / 2) as isize;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        (0..frames)
            .map(|t| {
                let start = (t * self.hop) as isize - half;
                for (j, slot) in buf.iter_mut().enumerate() {
                    let idx = reflect_index(start + j as isize, signal.len());
                    *slot = Complex64::new(signal[idx] * self.window[j], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.bins()].to_vec()
            })
            .collect()
    }

    /// Power spectra `|X|²`, one row of `n_fft/2 + 1` bins per frame.
    pub fn power(&self, signal: &[f64]) -> Vec<Vec<f64>> {
        self.analyze(signal)
            .into_iter()
            .map(|frame| frame.iter().map(|c| c.norm_sqr()).collect())
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`], trimmed to `len`
    /// samples.
    pub fn synthesize(&self, frames: &[Vec<Complex64>], len: usize) -> Vec<f64> {
        let half = self.n_fft / 2;
        let padded = frames.len() * self.hop + self.n_fft;
        let mut out = vec![0.0; padded];
        let mut norm = vec![0.0; padded];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for (t, spec) in frames.iter().enumerate() {
            buf[..spec.len()].copy_from_slice(spec);
            for k in 1..self.n_fft - spec.len() + 1 {
                buf[self.n_fft - k] = spec[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for j in 0..self.n_fft {
                let w = self.window[j];
                out[start + j] += buf[j].re / self.n_fft as f64 * w;
                norm[start + j] += w * w;
            }
        }
        (0..len)
            .map(|i| {
                let p = i + half;
                if p < padded && norm[p] > 1e-10 {
                    out[p] / norm[p]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_index_mirrors() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn frame_count_is_ceiling() {
        assert_eq!(frame_count(24000, 240), 100);
        assert_eq!(frame_count(24001, 240), 101);
        assert_eq!(frame_count(1, 240), 1);
    }

    #[test]
    fn analysis_synthesis_reconstructs_interior() {
        let stft = Stft::new(64, 64, 16).unwrap();
        let signal: Vec<f64> = (0..400).map(|i| ((i as f64) * 0.13).sin() + 0.2 * ((i as f64) * 0.71).cos()).collect();
        let spec = stft.analyze(&signal);
        let back = stft.synthesize(&spec, signal.len());
        for i in 40..360 {
            assert!((back[i] - signal[i]).abs() < 1e-9, "sample {i}");
        }
    }
}
