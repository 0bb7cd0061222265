//! Linear noise schedule and the constants derived from it.

use crate::error::{Error, Result};

/// Diffusion step index, `1..=T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StepIndex(usize);

impl StepIndex {
    pub fn new(t: usize, steps: usize) -> Result<Self> {
        if t == 0 || t > steps {
            return Err(Error::Index(format!("step {t} outside 1..={steps}")));
        }
        Ok(Self(t))
    }

    pub fn get(self) -> usize {
        self.0
    }
}

/// The per-step tables of a forward diffusion process. Index `t - 1` holds
/// the value for step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

/// `(√ᾱ_t, √(1−ᾱ_t), σ_t)` for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub sqrt_alpha_bar: f64,
    pub sqrt_one_minus_alpha_bar: f64,
    pub sigma: f64,
}

impl NoiseSchedule {
    /// `steps` betas spaced linearly from `beta_start` to `beta_end`, both
    /// endpoints included.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_start < beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let span = (beta_end - beta_start) / (steps - 1) as f64;
        let mut beta: Vec<f64> = (0..steps).map(|i| beta_start + i as f64 * span).collect();
        beta[steps - 1] = beta_end;
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                ((1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]).sqrt()
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    /// Rebuilds a schedule from stored betas, recomputing the derived tables.
    pub fn from_stored_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::Config("stored schedule has fewer than 2 steps".into()));
        }
        let increasing = beta.windows(2).all(|w| w[0] < w[1]);
        if !increasing || beta[0] <= 0.0 || beta[beta.len() - 1] >= 1.0 {
            return Err(Error::Config("stored betas are not strictly increasing in (0, 1)".into()));
        }
        Ok(Self::from_betas(beta))
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn step(&self, t: usize) -> Result<StepIndex> {
        StepIndex::new(t, self.steps())
    }

    pub fn step_stats(&self, t: StepIndex) -> Result<StepStats> {
        let i = self.index(t)?;
        Ok(StepStats {
            sqrt_alpha_bar: self.alpha_bar[i].sqrt(),
            sqrt_one_minus_alpha_bar: (1.0 - self.alpha_bar[i]).sqrt(),
            sigma: self.sigma[i],
        })
    }

    pub(crate) fn index(&self, t: StepIndex) -> Result<usize> {
        if t.0 > self.steps() {
            return Err(Error::Index(format!("step {} outside 1..={}", t.0, self.steps())));
        }
        Ok(t.0 - 1)
    }

    /// CSV with columns `t,beta,alpha_bar,sigma`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha_bar,sigma\n");
        for i in 0..self.steps() {
            out.push_str(&format!(
                "{},{:?},{:?},{:?}\n",
                i + 1,
                self.beta[i],
                self.alpha_bar[i],
                self.sigma[i]
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.06).unwrap()
    }

    #[test]
    fn endpoints_and_first_alpha() {
        let s = default_schedule();
        assert_eq!(s.beta()[0], 1e-4);
        assert_eq!(s.beta()[99], 0.06);
        assert_eq!(s.alpha()[0], 0.9999);
        assert_eq!(s.sigma()[0], 0.0);
    }

    #[test]
    fn step_stats_identities() {
        let s = default_schedule();
        let first = s.step_stats(s.step(1).unwrap()).unwrap();
        assert_eq!(first.sigma, 0.0);
        assert_eq!(first.sqrt_alpha_bar, 0.9999f64.sqrt());
        for t in 1..=100 {
            let st = s.step_stats(s.step(t).unwrap()).unwrap();
            let sum = st.sqrt_alpha_bar.powi(2) + st.sqrt_one_minus_alpha_bar.powi(2);
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(NoiseSchedule::linear(1, 1e-4, 0.06).is_err());
        assert!(NoiseSchedule::linear(10, 0.06, 1e-4).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.06).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
    }

    #[test]
    fn step_out_of_range() {
        let s = default_schedule();
        assert!(matches!(s.step(0), Err(Error::Index(_))));
        assert!(matches!(s.step(101), Err(Error::Index(_))));
    }

    #[test]
    fn csv_first_row() {
        let csv = default_schedule().to_csv();
        let row = csv.lines().nth(1).unwrap();
        assert!(row.starts_with("1,0.0001,"), "{row}");
    }
}
