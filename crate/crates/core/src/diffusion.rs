//! Forward noising, the noise-regression loss and the ancestral sampler.
//!
//! Everything here is generic over [`EpsilonPredictor`], so the same code
//! drives the trained denoiser, oracle predictors in tests, and the zero
//! model used for numerical sanity checks.

use crate::error::{Error, Result};
use crate::rng::{gaussian, SeededRng};
use crate::schedule::{NoiseSchedule, StepIndex};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A network that predicts the noise that was mixed into `y_t`.
///
/// `y_t` is `[frames × mel_bins]` and the returned value must have the same
/// shape. `cond` is the conditioner already recorded on `tape`.
pub trait EpsilonPredictor {
    fn mel_bins(&self) -> usize;

    fn predict_eps(&self, tape: &mut Tape, y_t: Var, t: StepIndex, cond: Var) -> Result<Var>;
}

/// `√ᾱ_t · y0 + √(1−ᾱ_t) · eps`.
pub fn forward_sample(s: &NoiseSchedule, y0: &Tensor, t: StepIndex, eps: &Tensor) -> Result<Tensor> {
    if y0.shape() != eps.shape() {
        return Err(Error::dim("forward_sample", y0.shape(), eps.shape()));
    }
    let st = s.step_stats(t)?;
    let data = y0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&y, &e)| st.sqrt_alpha_bar * y + st.sqrt_one_minus_alpha_bar * e)
        .collect();
    Tensor::new(y0.shape(), data)
}

/// Records the noise-regression objective on `tape` and returns the scalar
/// loss: the mean over elements of `(eps − ε̂)²`. Mean rather than sum keeps
/// the loss scale independent of segment length.
pub fn diffusion_loss<M: EpsilonPredictor + ?Sized>(
    tape: &mut Tape,
    s: &NoiseSchedule,
    model: &M,
    y0: &Tensor,
    cond: Var,
    t: StepIndex,
    eps: &Tensor,
) -> Result<Var> {
    let y_t = forward_sample(s, y0, t, eps)?;
    let y_t = tape.constant(&y_t);
    let pred = model.predict_eps(tape, y_t, t, cond)?;
    if tape.shape(pred) != eps.shape() {
        return Err(Error::dim("diffusion_loss", tape.shape(pred), eps.shape()));
    }
    let target = tape.constant(eps);
    tape.mse(pred, target)
}

/// One ancestral step given an already computed noise estimate:
/// `y_{t−1} = (y_t − (1−α_t)/√(1−ᾱ_t) · ε̂) / √α_t + σ_t · z`.
pub fn langevin_update(
    s: &NoiseSchedule,
    y_t: &Tensor,
    eps_hat: &Tensor,
    t: StepIndex,
    z: &Tensor,
) -> Result<Tensor> {
    if y_t.shape() != eps_hat.shape() {
        return Err(Error::dim("reverse_step", y_t.shape(), eps_hat.shape()));
    }
    if y_t.shape() != z.shape() {
        return Err(Error::dim("reverse_step", y_t.shape(), z.shape()));
    }
    let i = s.index(t)?;
    let alpha = s.alpha()[i];
    let coef = (1.0 - alpha) / (1.0 - s.alpha_bar()[i]).sqrt();
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let sigma = s.sigma()[i];
    let data = y_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(z.data())
        .map(|((&y, &e), &zv)| inv_sqrt_alpha * (y - coef * e) + sigma * zv)
        .collect();
    Tensor::new(y_t.shape(), data)
}

/// Runs the model on `y_t` and applies one ancestral step.
pub fn reverse_step<M: EpsilonPredictor + ?Sized>(
    s: &NoiseSchedule,
    model: &M,
    y_t: &Tensor,
    t: StepIndex,
    cond: &Tensor,
    z: &Tensor,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let y = tape.constant(y_t);
    let c = tape.constant(cond);
    let eps_hat = model.predict_eps(&mut tape, y, t, c)?;
    langevin_update(s, y_t, tape.value(eps_hat), t, z)
}

/// Generates `[frames × mel_bins]` by running all `T` reverse steps from
/// `y_T ~ N(0, I)`. Fresh noise `z` is drawn for every `t > 1`; the final
/// step uses `z = 0`.
pub fn sample<M: EpsilonPredictor + ?Sized>(
    s: &NoiseSchedule,
    model: &M,
    cond: &Tensor,
    frames: usize,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = SeededRng::new(seed);
    sample_with(s, model, cond, frames, &mut rng, |_, _| {})
}

/// [`sample`] with an explicit generator and a per-step observer that sees
/// `(t, y_{t-1})`.
pub fn sample_with<M, F>(
    s: &NoiseSchedule,
    model: &M,
    cond: &Tensor,
    frames: usize,
    rng: &mut SeededRng,
    mut observe: F,
) -> Result<Tensor>
where
    M: EpsilonPredictor + ?Sized,
    F: FnMut(StepIndex, &Tensor),
{
    let shape = [frames, model.mel_bins()];
    let mut y = gaussian(&shape, rng);
    for t in (1..=s.steps()).rev() {
        let step = s.step(t)?;
        let z = if t > 1 {
            gaussian(&shape, rng)
        } else {
            Tensor::zeros(&shape)
        };
        y = reverse_step(s, model, &y, step, cond, &z)?;
        observe(step, &y);
    }
    Ok(y)
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPredictor {
    pub mel_bins: usize,
}

impl EpsilonPredictor for ZeroPredictor {
    fn mel_bins(&self) -> usize {
        self.mel_bins
    }

    fn predict_eps(&self, tape: &mut Tape, y_t: Var, _t: StepIndex, _cond: Var) -> Result<Var> {
        Ok(tape.scale(y_t, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Returns a fixed tensor regardless of input.
    struct Fixed(Tensor);

    impl EpsilonPredictor for Fixed {
        fn mel_bins(&self) -> usize {
            self.0.shape()[1]
        }

        fn predict_eps(&self, tape: &mut Tape, _y: Var, _t: StepIndex, _c: Var) -> Result<Var> {
            Ok(tape.constant(&self.0))
        }
    }

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(100, 1e-4, 0.06).unwrap()
    }

    fn t2(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn forward_sample_limits() {
        let s = sched();
        let t = s.step(37).unwrap();
        let st = s.step_stats(t).unwrap();
        let y0 = t2(&[vec![1.0, -2.0], vec![0.5, 3.0]]);
        let zero = Tensor::zeros(&[2, 2]);
        let y = forward_sample(&s, &y0, t, &zero).unwrap();
        for (a, b) in y.data().iter().zip(y0.data()) {
            assert_eq!(*a, st.sqrt_alpha_bar * b);
        }
        let y = forward_sample(&s, &zero, t, &y0).unwrap();
        for (a, b) in y.data().iter().zip(y0.data()) {
            assert_eq!(*a, st.sqrt_one_minus_alpha_bar * b);
        }
        assert!(forward_sample(&s, &y0, t, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn loss_of_oracle_and_offset_models() {
        let s = sched();
        let mut rng = SeededRng::new(4);
        let y0 = gaussian(&[5, 3], &mut rng);
        let eps = gaussian(&[5, 3], &mut rng);
        let t = s.step(20).unwrap();

        let mut tape = Tape::new();
        let cond = tape.constant(&Tensor::zeros(&[5, 1]));
        let loss = diffusion_loss(&mut tape, &s, &Fixed(eps.clone()), &y0, cond, t, &eps).unwrap();
        assert_eq!(tape.value(loss).item().unwrap(), 0.0);

        let c = 0.3;
        let shifted = Tensor::new(eps.shape(), eps.data().iter().map(|e| e + c).collect()).unwrap();
        let loss = diffusion_loss(&mut tape, &s, &Fixed(shifted), &y0, cond, t, &eps).unwrap();
        assert!((tape.value(loss).item().unwrap() - c * c).abs() < 1e-12);
    }

    #[test]
    fn first_step_ignores_z() {
        let s = sched();
        let y = t2(&[vec![0.2, -0.7]]);
        let model = Fixed(t2(&[vec![0.1, 0.4]]));
        let cond = Tensor::zeros(&[1, 1]);
        let t1 = s.step(1).unwrap();
        let a = reverse_step(&s, &model, &y, t1, &cond, &t2(&[vec![5.0, -9.0]])).unwrap();
        let b = reverse_step(&s, &model, &y, t1, &cond, &Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_prediction_rescales() {
        let s = sched();
        let t = s.step(30).unwrap();
        let y = t2(&[vec![0.2, -0.7, 1.5]]);
        let out = reverse_step(&s, &ZeroPredictor { mel_bins: 3 }, &y, t, &Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 3])).unwrap();
        let a = s.alpha()[29];
        for (o, v) in out.data().iter().zip(y.data()) {
            assert_eq!(*o, v / a.sqrt());
        }
    }

    #[test]
    fn scalar_hand_evaluation_at_t2() {
        let s = sched();
        // hand-evaluated constants for t = 2 of the default schedule
        let beta1: f64 = 1e-4;
        let beta2: f64 = 1e-4 + (0.06 - 1e-4) / 99.0;
        let (a1, a2) = (1.0 - beta1, 1.0 - beta2);
        let ab1 = a1;
        let ab2 = a1 * a2;
        let sigma2 = ((1.0 - ab1) / (1.0 - ab2) * beta2).sqrt();
        let (y, e, z) = (0.8_f64, -0.3_f64, 1.7_f64);
        let want = (y - (1.0 - a2) / (1.0 - ab2).sqrt() * e) / a2.sqrt() + sigma2 * z;

        let out = reverse_step(
            &s,
            &Fixed(t2(&[vec![e]])),
            &t2(&[vec![y]]),
            s.step(2).unwrap(),
            &Tensor::zeros(&[1, 1]),
            &t2(&[vec![z]]),
        )
        .unwrap();
        assert!((out.data()[0] - want).abs() < 1e-14, "{} vs {want}", out.data()[0]);
    }

    #[test]
    fn sample_is_deterministic_and_finite() {
        let s = NoiseSchedule::linear(20, 1e-4, 0.06).unwrap();
        let model = ZeroPredictor { mel_bins: 4 };
        let cond = Tensor::zeros(&[6, 1]);
        let a = sample(&s, &model, &cond, 6, 99).unwrap();
        let b = sample(&s, &model, &cond, 6, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[6, 4]);
        assert!(a.data().iter().all(|v| v.is_finite()));
        let c = sample(&s, &model, &cond, 6, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_runs_exactly_t_steps_with_noise_only_above_one() {
        let s = NoiseSchedule::linear(12, 1e-4, 0.06).unwrap();
        let model = ZeroPredictor { mel_bins: 3 };
        let cond = Tensor::zeros(&[2, 1]);
        let mut steps = Vec::new();
        let mut rng = SeededRng::new(5);
        let got = sample_with(&s, &model, &cond, 2, &mut rng, |t, _| steps.push(t.get())).unwrap();
        assert_eq!(steps, (1..=12).rev().collect::<Vec<_>>());
        let consumed = rng.state();

        // replay by hand: one draw for y_T, then one per t > 1
        let mut rng = SeededRng::new(5);
        let mut y = gaussian(&[2, 3], &mut rng);
        for t in (1..=12).rev() {
            let z = if t > 1 { gaussian(&[2, 3], &mut rng) } else { Tensor::zeros(&[2, 3]) };
            y = langevin_update(&s, &y, &Tensor::zeros(&[2, 3]), s.step(t).unwrap(), &z).unwrap();
        }
        assert_eq!(got, y);
        assert_eq!(rng.state(), consumed);
    }
}
