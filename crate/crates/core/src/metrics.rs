//! Objective conversion metrics: mel-cepstral distortion with DTW alignment
//! and F0 Pearson correlation.
//!
//! Cepstra are the orthonormal DCT-II of each log-mel frame; 13 coefficients
//! are kept and `c0` (overall level) is excluded from MCD.

use std::f64::consts::{LN_10, PI};

use crate::error::{Error, Result};
use crate::features::{F0Contour, MelSpectrogram};

pub const DEFAULT_CEPSTRAL_COEFFS: usize = 13;

/// `frames × n_coeffs` mel-cepstral coefficients, `c0` first.
#[derive(Debug, Clone, PartialEq)]
pub struct CepstrumSequence {
    pub frames: Vec<Vec<f64>>,
}

impl CepstrumSequence {
    pub fn n_coeffs(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Coefficients `1..` of each frame.
    fn without_c0(&self) -> Vec<&[f64]> {
        self.frames.iter().map(|f| &f[1..]).collect()
    }
}

/// Monotone alignment from `(0, 0)` to `(I−1, J−1)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
}

/// First `n_out` coefficients of the orthonormal DCT-II of `x`.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// DCT-II over the mel axis of every frame of a log-mel spectrogram
/// (normalized inputs are denormalized first).
pub fn mel_to_cepstrum(mel: &MelSpectrogram, n_coeffs: usize) -> Result<CepstrumSequence> {
    let log = mel.to_log()?;
    if n_coeffs < 2 || n_coeffs > log.n_mels {
        return Err(Error::Config(format!(
            "need 2..={} cepstral coefficients, got {n_coeffs}",
            log.n_mels
        )));
    }
    Ok(CepstrumSequence {
        frames: (0..log.frames).map(|t| dct2(log.frame(t), n_coeffs)).collect(),
    })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum-cost monotone alignment with steps `(1,0)`, `(0,1)`, `(1,1)` and
/// Euclidean local cost. Ties prefer the diagonal step.
pub fn dtw<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<(AlignmentPath, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Input("dtw needs non-empty sequences".into()));
    }
    let dim = a[0].as_ref().len();
    if a.iter().any(|v| v.as_ref().len() != dim) || b.iter().any(|v| v.as_ref().len() != dim) {
        return Err(Error::Input("dtw sequences must share one feature dimension".into()));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let local = euclidean(a[i].as_ref(), b[j].as_ref());
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { f64::INFINITY };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { f64::INFINITY };
                let left = if j > 0 { acc[i * m + j - 1] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[i * m + j] = local + best;
        }
    }

    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok((AlignmentPath { pairs }, acc[n * m - 1]))
}

const MCD_SCALE: f64 = 10.0 / LN_10;

fn frame_mcd(a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    MCD_SCALE * (2.0 * sq).sqrt()
}

/// Mel-cepstral distortion in dB, averaged over the pairs of a DTW alignment
/// computed on coefficients `1..`.
pub fn mcd(reference: &CepstrumSequence, hyp: &CepstrumSequence) -> Result<f64> {
    let (path, _) = mcd_alignment(reference, hyp)?;
    mcd_along(reference, hyp, &path)
}

/// The DTW alignment used by [`mcd`].
pub fn mcd_alignment(reference: &CepstrumSequence, hyp: &CepstrumSequence) -> Result<(AlignmentPath, f64)> {
    if reference.n_coeffs() != hyp.n_coeffs() {
        return Err(Error::Input(format!(
            "cepstral coefficient counts differ: {} vs {}",
            reference.n_coeffs(),
            hyp.n_coeffs()
        )));
    }
    if reference.n_coeffs() < 2 {
        return Err(Error::Input("MCD needs at least two cepstral coefficients".into()));
    }
    dtw(&reference.without_c0(), &hyp.without_c0())
}

/// MCD averaged over the given aligned frame pairs.
pub fn mcd_along(reference: &CepstrumSequence, hyp: &CepstrumSequence, path: &AlignmentPath) -> Result<f64> {
    if path.pairs.is_empty() {
        return Err(Error::Input("empty alignment".into()));
    }
    let total: f64 = path
        .pairs
        .iter()
        .map(|&(i, j)| frame_mcd(&reference.frames[i][1..], &hyp.frames[j][1..]))
        .sum();
    Ok(total / path.pairs.len() as f64)
}

/// Pearson correlation of two samples.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "Pearson correlation needs two equally long samples of length >= 2 (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("Pearson correlation of a constant sample".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// F0 Pearson correlation (in Hz) over frames voiced in both of two aligned
/// contours.
pub fn fpc(reference: &F0Contour, hyp: &F0Contour) -> Result<f64> {
    if reference.len() != hyp.len() {
        return Err(Error::Input(format!(
            "aligned contours must have equal length ({} vs {})",
            reference.len(),
            hyp.len()
        )));
    }
    let path = AlignmentPath {
        pairs: (0..reference.len()).map(|i| (i, i)).collect(),
    };
    fpc_along(reference, hyp, &path)
}

/// [`fpc`] over the frame pairs of an alignment path.
pub fn fpc_along(reference: &F0Contour, hyp: &F0Contour, path: &AlignmentPath) -> Result<f64> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for &(i, j) in &path.pairs {
        if i >= reference.len() || j >= hyp.len() {
            return Err(Error::Index(format!("alignment pair ({i}, {j}) outside the contours")));
        }
        if reference.voiced(i) && hyp.voiced(j) {
            x.push(reference.hz[i]);
            y.push(hyp.hz[j]);
        }
    }
    if x.len() < 2 {
        return Err(Error::UndefinedMetric(format!(
            "FPC needs at least 2 jointly voiced frames, found {}",
            x.len()
        )));
    }
    pearson(&x, &y)
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub utterance_id: String,
    pub mcd_db: f64,
    /// `None` when F0 is unavailable or the correlation is undefined.
    pub fpc: Option<f64>,
    pub frames_ref: usize,
    pub frames_hyp: usize,
}

/// MCD between two mel spectrograms and, when both contours are given, FPC
/// along the same alignment.
pub fn evaluate_pair(
    id: &str,
    ref_mel: &MelSpectrogram,
    hyp_mel: &MelSpectrogram,
    f0: Option<(&F0Contour, &F0Contour)>,
) -> Result<EvalRow> {
    let rc = mel_to_cepstrum(ref_mel, DEFAULT_CEPSTRAL_COEFFS)?;
    let hc = mel_to_cepstrum(hyp_mel, DEFAULT_CEPSTRAL_COEFFS)?;
    let (path, _) = mcd_alignment(&rc, &hc)?;
    let mcd_db = mcd_along(&rc, &hc, &path)?;
    let fpc = match f0 {
        Some((r, h)) if r.len() == ref_mel.frames && h.len() == hyp_mel.frames => match fpc_along(r, h, &path) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        },
        Some((r, h)) => {
            return Err(Error::Input(format!(
                "F0 contours ({} / {} frames) do not match mel frames ({} / {})",
                r.len(),
                h.len(),
                ref_mel.frames,
                hyp_mel.frames
            )))
        }
        None => None,
    };
    Ok(EvalRow {
        utterance_id: id.to_string(),
        mcd_db,
        fpc,
        frames_ref: ref_mel.frames,
        frames_hyp: hyp_mel.frames,
    })
}
