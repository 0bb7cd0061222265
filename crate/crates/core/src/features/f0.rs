//! Fundamental frequency contours.
//!
//! The built-in estimator is a YIN-style detector: a squared-difference
//! function normalized by its cumulative mean, an absolute threshold for
//! voicing, and parabolic interpolation of the chosen lag. Several contours
//! (from this or external estimators) are fused with [`median_f0`].

use crate::error::{Error, Result};
use crate::features::stft::{frame_count, reflect_index};

#[derive(Debug, Clone, PartialEq)]
pub struct F0Config {
    pub sample_rate: u32,
    pub hop_size: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Integration window in samples; must cover at least one `f_min` period.
    pub window: usize,
    /// Cumulative-mean-normalized difference below which a lag counts as voiced.
    pub threshold: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            sample_rate: 24_000,
            hop_size: 240,
            f_min: 50.0,
            f_max: 1100.0,
            window: 1024,
            threshold: 0.15,
        }
    }
}

/// Per-frame F0 in Hz (0 = unvoiced) and its natural log (0 kept for unvoiced).
#[derive(Debug, Clone, PartialEq)]
pub struct F0Contour {
    pub hz: Vec<f64>,
    pub log_f0: Vec<f64>,
}

impl F0Contour {
    pub fn from_hz(hz: Vec<f64>) -> Result<Self> {
        if let Some(bad) = hz.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Input(format!("invalid F0 value {bad}")));
        }
        let log_f0 = hz.iter().map(|&h| if h > 0.0 { h.ln() } else { 0.0 }).collect();
        Ok(Self { hz, log_f0 })
    }

    pub fn len(&self) -> usize {
        self.hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hz.is_empty()
    }

    pub fn voiced(&self, t: usize) -> bool {
        self.hz[t] > 0.0
    }

    /// Multiplies voiced frames by `exp(shift)`, i.e. adds `shift` in log-F0.
    pub fn shifted(&self, log_shift: f64) -> Self {
        let hz = self
            .hz
            .iter()
            .map(|&h| if h > 0.0 { h * log_shift.exp() } else { 0.0 })
            .collect();
        Self::from_hz(hz).expect("shifting keeps values valid")
    }
}

pub fn estimate_f0(wav: &[f64], cfg: &F0Config) -> Result<F0Contour> {
    let nyquist = cfg.sample_rate as f64 / 2.0;
    if !(cfg.f_min > 0.0 && cfg.f_min < cfg.f_max && cfg.f_max < nyquist) {
        return Err(Error::Config(format!(
            "need 0 < f_min < f_max < {nyquist}, got {} and {}",
            cfg.f_min, cfg.f_max
        )));
    }
    let max_lag = (cfg.sample_rate as f64 / cfg.f_min).ceil() as usize;
    let min_lag = ((cfg.sample_rate as f64 / cfg.f_max).floor() as usize).max(2);
    if cfg.window < max_lag {
        return Err(Error::Config(format!(
            "window of {} samples is shorter than one f_min period ({max_lag} samples)",
            cfg.window
        )));
    }
    if wav.is_empty() {
        return Err(Error::Input("empty audio".into()));
    }
    if cfg.hop_size == 0 {
        return Err(Error::Config("hop size must be positive".into()));
    }

    let frames = frame_count(wav.len(), cfg.hop_size);
    let span = cfg.window + max_lag + 1;
    let mut segment = vec![0.0; span];
    let mut diff = vec![0.0; max_lag + 2];
    let hz = (0..frames)
        .map(|t| {
            let start = (t * cfg.hop_size) as isize - (cfg.window / 2) as isize;
            for (j, s) in segment.iter_mut().enumerate() {
                *s = wav[reflect_index(start + j as isize, wav.len())];
            }
            detect(&segment, cfg, min_lag, max_lag, &mut diff)
        })
        .collect();
    F0Contour::from_hz(hz)
}

fn detect(x: &[f64], cfg: &F0Config, min_lag: usize, max_lag: usize, diff: &mut [f64]) -> f64 {
    let w = cfg.window;
    let energy: f64 = x[..w].iter().map(|v| v * v).sum();
    if energy <= 1e-12 * w as f64 {
        return 0.0;
    }
    // squared difference d(tau), then cumulative-mean normalization in place
    diff[0] = 1.0;
    let mut running = 0.0;
    for tau in 1..=max_lag + 1 {
        let d: f64 = x[..w].iter().zip(&x[tau..tau + w]).map(|(a, b)| (a - b) * (a - b)).sum();
        running += d;
        diff[tau] = if running > 0.0 { d * tau as f64 / running } else { 1.0 };
    }

    let mut tau = min_lag;
    while tau <= max_lag {
        if diff[tau] < cfg.threshold {
            while tau < max_lag && diff[tau + 1] < diff[tau] {
                tau += 1;
            }
            return cfg.sample_rate as f64 / refine(diff, tau);
        }
        tau += 1;
    }
    0.0
}

fn refine(d: &[f64], tau: usize) -> f64 {
    let (a, b, c) = (d[tau - 1], d[tau], d[tau + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-15 {
        return tau as f64;
    }
    let shift = 0.5 * (a - c) / denom;
    tau as f64 + shift.clamp(-1.0, 1.0)
}

/// Fuses equally long contours frame by frame. A frame is voiced when a strict
/// majority of contours voice it; its value is then the median over the
/// voiced estimates (mean of the middle two for an even count).
pub fn median_f0(contours: &[F0Contour]) -> Result<F0Contour> {
    let first = contours
        .first()
        .ok_or_else(|| Error::Input("median_f0 needs at least one contour".into()))?;
    if let Some(bad) = contours.iter().find(|c| c.len() != first.len()) {
        return Err(Error::Input(format!(
            "contour lengths differ: {} vs {}",
            first.len(),
            bad.len()
        )));
    }
    let mut voiced = Vec::with_capacity(contours.len());
    let hz = (0..first.len())
        .map(|t| {
            voiced.clear();
            voiced.extend(contours.iter().map(|c| c.hz[t]).filter(|&h| h > 0.0));
            if 2 * voiced.len() <= contours.len() {
                return 0.0;
            }
            voiced.sort_by(f64::total_cmp);
            let n = voiced.len();
            if n % 2 == 1 {
                voiced[n / 2]
            } else {
                0.5 * (voiced[n / 2 - 1] + voiced[n / 2])
            }
        })
        .collect();
    F0Contour::from_hz(hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn sine(freq: f64, amp: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 24_000.0).sin())
            .collect()
    }

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    fn contour(hz: &[f64]) -> F0Contour {
        F0Contour::from_hz(hz.to_vec()).unwrap()
    }

    #[test]
    fn sine_220_within_3_hz() {
        let f0 = estimate_f0(&sine(220.0, 0.5, 24_000), &F0Config::default()).unwrap();
        assert_eq!(f0.len(), 100);
        let voiced: Vec<f64> = f0.hz.iter().copied().filter(|&h| h > 0.0).collect();
        assert!(voiced.len() > 90);
        let m = median(voiced);
        assert!((m - 220.0).abs() <= 3.0, "{m}");
    }

    #[test]
    fn white_noise_mostly_unvoiced() {
        let mut rng = SeededRng::new(17);
        let noise: Vec<f64> = (0..24_000).map(|_| 0.3 * rng.normal()).collect();
        let f0 = estimate_f0(&noise, &F0Config::default()).unwrap();
        let unvoiced = f0.hz.iter().filter(|&&h| h == 0.0).count();
        assert!(unvoiced as f64 >= 0.8 * f0.len() as f64, "{unvoiced}/{}", f0.len());
    }

    #[test]
    fn silence_unvoiced() {
        let f0 = estimate_f0(&vec![0.0; 4800], &F0Config::default()).unwrap();
        assert!(f0.hz.iter().all(|&h| h == 0.0));
        assert!(f0.log_f0.iter().all(|&h| h == 0.0));
    }

    #[test]
    fn short_window_is_config_error() {
        let cfg = F0Config {
            window: 256,
            ..F0Config::default()
        };
        assert!(matches!(estimate_f0(&[0.0; 100], &cfg), Err(Error::Config(_))));
        let cfg = F0Config {
            f_max: 13_000.0,
            ..F0Config::default()
        };
        assert!(matches!(estimate_f0(&[0.0; 100], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn log_f0_invariant() {
        let c = contour(&[0.0, 100.0, 220.0]);
        assert_eq!(c.log_f0, vec![0.0, 100f64.ln(), 220f64.ln()]);
    }

    #[test]
    fn median_examples() {
        let a = contour(&[100.0, 0.0, 150.0]);
        assert_eq!(median_f0(&[a.clone(), a.clone(), a.clone()]).unwrap(), a);

        let m = median_f0(&[contour(&[100.0]), contour(&[200.0]), contour(&[300.0])]).unwrap();
        assert_eq!(m.hz, vec![200.0]);

        let m = median_f0(&[contour(&[100.0]), contour(&[0.0]), contour(&[110.0])]).unwrap();
        assert_eq!(m.hz, vec![105.0]);

        let m = median_f0(&[contour(&[0.0]), contour(&[0.0]), contour(&[110.0])]).unwrap();
        assert_eq!(m.hz, vec![0.0]);
    }

    #[test]
    fn median_rule_matches_enumeration() {
        // every voicing pattern over three estimators with distinct values
        let values = [120.0, 90.0, 140.0];
        for mask in 0u8..8 {
            let cs: Vec<F0Contour> = (0..3)
                .map(|i| contour(&[if mask & (1 << i) != 0 { values[i] } else { 0.0 }]))
                .collect();
            let mut v: Vec<f64> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| values[i]).collect();
            v.sort_by(f64::total_cmp);
            let want = match v.len() {
                0 | 1 => 0.0,
                2 => (v[0] + v[1]) / 2.0,
                _ => v[1],
            };
            assert_eq!(median_f0(&cs).unwrap().hz[0], want, "mask {mask:03b}");
        }
    }

    #[test]
    fn median_length_mismatch() {
        let err = median_f0(&[contour(&[1.0, 2.0]), contour(&[1.0])]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        assert!(median_f0(&[]).is_err());
    }
}
