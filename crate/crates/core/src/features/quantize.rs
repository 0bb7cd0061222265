use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedContour {
    pub bins: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
}

/// `clamp(floor((v - lo) / (hi - lo) * n_bins), 0, n_bins - 1)` per frame.
pub fn quantize(values: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<QuantizedContour> {
    if lo.is_nan() || hi.is_nan() || lo >= hi {
        return Err(Error::Config(format!("quantization range needs lo < hi, got {lo} and {hi}")));
    }
    if n_bins == 0 {
        return Err(Error::Config("quantization needs at least one bin".into()));
    }
    let top = (n_bins - 1) as f64;
    let bins = values
        .iter()
        .map(|&v| ((v - lo) / (hi - lo) * n_bins as f64).floor().clamp(0.0, top) as usize)
        .collect();
    Ok(QuantizedContour { bins, lo, hi })
}

/// Linearly interpolated percentile (`pct` in `[0, 100]`) of `values`.
pub fn percentile(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = pct.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    Some(if i + 1 < v.len() { v[i] + frac * (v[i + 1] - v[i]) } else { v[i] })
}

/// A quantization range from the 0.1th and 99.9th percentiles, widened to a
/// unit interval when the data are (nearly) constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantRange {
    pub lo: f64,
    pub hi: f64,
}

impl QuantRange {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let lo = percentile(values, 0.1).ok_or_else(|| Error::Input("no values to fit a range".into()))?;
        let mut hi = percentile(values, 99.9).unwrap_or(lo);
        if hi <= lo {
            hi = lo + 1.0;
        }
        Ok(Self { lo, hi })
    }

    pub fn quantize(&self, values: &[f64]) -> Result<QuantizedContour> {
        quantize(values, self.lo, self.hi, DEFAULT_BINS)
    }
}
