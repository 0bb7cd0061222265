//! The training loop: random segments, a fresh step and fresh noise per
//! batch item, the noise-regression loss and one Adam update per iteration.

pub mod adam;
pub mod checkpoint;

use std::time::Instant;

pub use adam::{adam_step, clip_grad_norm, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use crate::denoiser::{ConditionInputs, Denoiser, DenoiserConfig};
use crate::diffusion::diffusion_loss;
use crate::error::{Error, Result};
use crate::features::quantize::quantize;
use crate::features::{F0Contour, LoudnessContour, MelSpectrogram, MelStats, PpgSequence, QuantRange};
use crate::rng::{gaussian, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Total number of updates; a resumed run continues up to this count.
    pub n_iter: u64,
    pub lr: f64,
    pub seed: u64,
    /// Segments per update.
    pub batch: usize,
    /// Segment length; shorter utterances are used whole.
    pub segment_frames: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub model: DenoiserConfig,
    /// Loss events are emitted every `log_every` updates (and after the last).
    pub log_every: u64,
    /// Checkpoint events every `checkpoint_every` updates; 0 means only at the end.
    pub checkpoint_every: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iter: 100_000,
            lr: 2e-4,
            seed: 0,
            batch: 16,
            segment_frames: 128,
            diffusion_steps: 100,
            beta_start: 1e-4,
            beta_end: 0.06,
            model: DenoiserConfig::default(),
            log_every: 100,
            checkpoint_every: 10_000,
            clip_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.n_iter == 0 || self.batch == 0 || self.segment_frames == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "n_iter, batch, segment_frames and log_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.clip_norm.is_nan() || self.clip_norm < 0.0 {
            return Err(Error::Config(format!("clip_norm must be >= 0, got {}", self.clip_norm)));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.diffusion_steps, self.beta_start, self.beta_end)
    }
}

/// Corpus statistics fixed at the start of training and reused at conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub mel: MelStats,
    /// Over voiced log-F0 values.
    pub f0: QuantRange,
    pub loudness: QuantRange,
}

/// Log-F0 range used when a corpus has no voiced frames at all.
const FALLBACK_LOG_F0: (f64, f64) = (3.912_023_005_428_146, 7.003_065_458_786_462);

impl FeatureStats {
    pub fn fit(data: &[TrainingExample]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Input("cannot fit statistics on an empty corpus".into()));
        }
        let mel = MelStats::from_corpus(data.iter().map(|d| &d.mel))?;
        let voiced: Vec<f64> = data
            .iter()
            .flat_map(|d| (0..d.f0.len()).filter(|&t| d.f0.voiced(t)).map(|t| d.f0.log_f0[t]))
            .collect();
        let f0 = if voiced.is_empty() {
            QuantRange {
                lo: FALLBACK_LOG_F0.0,
                hi: FALLBACK_LOG_F0.1,
            }
        } else {
            QuantRange::fit(&voiced)?
        };
        let loud: Vec<f64> = data.iter().flat_map(|d| d.loudness.values.iter().copied()).collect();
        Ok(Self {
            mel,
            f0,
            loudness: QuantRange::fit(&loud)?,
        })
    }

    /// Quantizes the contours into `n_bins` bins and pairs them with the PPG.
    pub fn condition_inputs(
        &self,
        ppg: &PpgSequence,
        f0: &F0Contour,
        loudness: &LoudnessContour,
        n_bins: usize,
    ) -> Result<ConditionInputs> {
        let f = quantize(&f0.log_f0, self.f0.lo, self.f0.hi, n_bins)?;
        let l = quantize(&loudness.values, self.loudness.lo, self.loudness.hi, n_bins)?;
        ConditionInputs::new(ppg.clone(), &f, &l)
    }
}

/// One utterance: conditioning features and its target log-mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub ppg: PpgSequence,
    pub f0: F0Contour,
    pub loudness: LoudnessContour,
    pub mel: MelSpectrogram,
}

impl TrainingExample {
    /// Checks that every feature has the same number of frames.
    pub fn check_alignment(&self) -> Result<usize> {
        let n = self.mel.frames;
        if self.ppg.frames != n || self.f0.len() != n || self.loudness.values.len() != n {
            return Err(Error::Input(format!(
                "utterance `{}`: frame counts differ (mel {n}, ppg {}, f0 {}, loudness {})",
                self.id,
                self.ppg.frames,
                self.f0.len(),
                self.loudness.values.len()
            )));
        }
        if n == 0 {
            return Err(Error::Input(format!("utterance `{}` has no frames", self.id)));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Number of completed updates, starting at 1.
    pub iteration: u64,
    /// Batch-mean loss evaluated before the update.
    pub loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Loss(LossRecord),
    Checkpoint(&'a Checkpoint),
}

struct Prepared {
    id: String,
    y0: Tensor,
    cond: ConditionInputs,
}

impl Prepared {
    fn frames(&self) -> usize {
        self.y0.shape()[0]
    }
}

fn prepare(data: &[TrainingExample], stats: &FeatureStats, model: &DenoiserConfig) -> Result<Vec<Prepared>> {
    data.iter()
        .map(|ex| {
            let frames = ex.check_alignment()?;
            if ex.mel.n_mels != model.n_mels {
                return Err(Error::Config(format!(
                    "utterance `{}` has {} mel bins, model expects {}",
                    ex.id, ex.mel.n_mels, model.n_mels
                )));
            }
            if ex.ppg.dim != model.ppg_dim {
                return Err(Error::Config(format!(
                    "utterance `{}` has PPG dimension {}, model expects {}",
                    ex.id, ex.ppg.dim, model.ppg_dim
                )));
            }
            let mel = ex.mel.normalized(&stats.mel)?;
            Ok(Prepared {
                id: ex.id.clone(),
                y0: Tensor::new(&[frames, model.n_mels], mel.values)?,
                cond: stats.condition_inputs(&ex.ppg, &ex.f0, &ex.loudness, model.n_bins)?,
            })
        })
        .collect()
}

fn slice_frames(t: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let width = t.shape()[1];
    Tensor::new(&[len, width], t.data()[start * width..(start + len) * width].to_vec())
}

/// A fresh checkpoint at iteration 0: initialized model, fitted statistics,
/// zeroed optimizer state and the training generator.
pub fn initial_checkpoint(data: &[TrainingExample], cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let model = Denoiser::new(cfg.model.clone(), cfg.seed)?;
    let adam = AdamState::new(model.params.flatten().into_iter().map(|(_, t)| t));
    Ok(Checkpoint {
        config: cfg.clone(),
        schedule: cfg.schedule()?,
        stats: FeatureStats::fit(data)?,
        model,
        adam,
        iteration: 0,
        rng: SeededRng::new(cfg.seed).fork(1).state(),
    })
}

/// Trains until `cfg.n_iter` updates have been applied, starting fresh or
/// from `resume`. `observer` sees loss records and periodic checkpoints; an
/// error from it stops training.
pub fn train(
    data: &[TrainingExample],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    observer: &mut dyn FnMut(TrainEvent<'_>) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training needs at least one utterance".into()));
    }
    let mut state = match resume {
        None => initial_checkpoint(data, cfg)?,
        Some(ck) => {
            if ck.config.model != cfg.model {
                return Err(Error::Config(format!(
                    "checkpoint model {:?} differs from configured model {:?}",
                    ck.config.model, cfg.model
                )));
            }
            if ck.schedule != cfg.schedule()? {
                return Err(Error::Config("checkpoint noise schedule differs from configuration".into()));
            }
            Checkpoint {
                config: cfg.clone(),
                ..ck
            }
        }
    };
    let prepared = prepare(data, &state.stats, &cfg.model)?;
    let names = state.model.params.names();
    let mut rng = SeededRng::from_state(state.rng);
    let clock = Instant::now();

    while state.iteration < cfg.n_iter {
        let iteration = state.iteration + 1;
        let mut tape = Tape::new();
        let bound = state.model.bind(&mut tape, true);
        let mut total: Option<Var> = None;
        for _ in 0..cfg.batch {
            let ex = &prepared[rng.below(prepared.len())];
            let len = cfg.segment_frames.min(ex.frames());
            let start = rng.below(ex.frames() - len + 1);
            let t = 1 + rng.below(state.schedule.steps());
            let step = state.schedule.step(t)?;
            let eps = gaussian(&[len, cfg.model.n_mels], &mut rng);
            let y0 = slice_frames(&ex.y0, start, len)?;
            let cond = bound.conditioner(&mut tape, &ex.cond.slice(start, len))?;
            let loss = diffusion_loss(&mut tape, &state.schedule, &bound, &y0, cond, step, &eps)?;
            if !tape.value(loss).item()?.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration,
                    t,
                    segment: format!("{}[{start}..{}]", ex.id, start + len),
                });
            }
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        let total = total.expect("batch is positive");
        let loss = tape.scale(total, 1.0 / cfg.batch as f64);
        let loss_value = tape.value(loss).item()?;
        tape.backward(loss)?;

        let mut grads: Vec<Vec<f64>> = bound
            .vars
            .flatten()
            .into_iter()
            .map(|(name, &v)| {
                tape.grad(v)
                    .map(<[f64]>::to_vec)
                    .ok_or_else(|| Error::State(format!("no gradient recorded for `{name}`")))
            })
            .collect::<Result<_>>()?;
        drop(tape);
        if cfg.clip_norm > 0.0 {
            clip_grad_norm(&mut grads, cfg.clip_norm);
        }
        let mut params = state.model.params.flatten_mut();
        adam_step(&mut params, &grads, &names, &mut state.adam, cfg.lr, true)?;

        state.iteration = iteration;
        state.rng = rng.state();
        if iteration % cfg.log_every == 0 || iteration == cfg.n_iter {
            observer(TrainEvent::Loss(LossRecord {
                iteration,
                loss: loss_value,
                wall_ms: clock.elapsed().as_millis() as u64,
            }))?;
        }
        if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 && iteration != cfg.n_iter {
            observer(TrainEvent::Checkpoint(&state))?;
        }
    }
    observer(TrainEvent::Checkpoint(&state))?;
    Ok(state)
}

/// [`train`] collecting every emitted loss record.
pub fn train_collect(
    data: &[TrainingExample],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
) -> Result<(Checkpoint, Vec<LossRecord>)> {
    let mut losses = Vec::new();
    let ck = train(data, cfg, resume, &mut |ev| {
        if let TrainEvent::Loss(r) = ev {
            losses.push(r);
        }
        Ok(())
    })?;
    Ok((ck, losses))
}

/// Loss CSV: `iteration,loss,wall_ms`.
pub fn loss_csv_header() -> &'static str {
    "iteration,loss,wall_ms"
}

pub fn loss_csv_row(r: &LossRecord) -> String {
    format!("{},{:?},{}", r.iteration, r.loss, r.wall_ms)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::{synth_ppg, MelScale};

    pub(crate) fn toy_model() -> DenoiserConfig {
        DenoiserConfig {
            n_mels: 6,
            ppg_dim: 5,
            cond_dim: 8,
            channels: 8,
            layers: 2,
            kernel_size: 3,
            dilation: 1,
            step_hidden: 16,
            n_bins: 16,
        }
    }

    pub(crate) fn toy_example(id: &str, frames: usize, seed: u64) -> TrainingExample {
        let m = toy_model();
        let mut rng = SeededRng::new(seed);
        let mel: Vec<f64> = (0..frames * m.n_mels)
            .map(|i| -4.0 + ((i % m.n_mels) as f64 * 0.5).sin() + 0.1 * rng.normal())
            .collect();
        let hz: Vec<f64> = (0..frames).map(|t| if t % 7 == 3 { 0.0 } else { 200.0 + 5.0 * t as f64 }).collect();
        TrainingExample {
            id: id.into(),
            ppg: synth_ppg(frames, m.ppg_dim, seed).unwrap(),
            f0: F0Contour::from_hz(hz).unwrap(),
            loudness: LoudnessContour {
                values: (0..frames).map(|t| -3.0 + (t as f64 * 0.2).cos()).collect(),
            },
            mel: MelSpectrogram::new(mel, m.n_mels, 240, 24_000, MelScale::Log).unwrap(),
        }
    }

    pub(crate) fn toy_config(n_iter: u64) -> TrainConfig {
        TrainConfig {
            n_iter,
            lr: 1e-3,
            seed: 5,
            batch: 2,
            segment_frames: 12,
            diffusion_steps: 20,
            beta_start: 1e-4,
            beta_end: 0.06,
            model: toy_model(),
            log_every: 1,
            checkpoint_every: 0,
            clip_norm: 0.0,
        }
    }

    #[test]
    fn equal_seeds_equal_losses() {
        let data = vec![toy_example("a", 20, 1), toy_example("b", 9, 2)];
        let cfg = toy_config(6);
        let (ck1, l1) = train_collect(&data, &cfg, None).unwrap();
        let (ck2, l2) = train_collect(&data, &cfg, None).unwrap();
        let strip = |l: &[LossRecord]| l.iter().map(|r| (r.iteration, r.loss.to_bits())).collect::<Vec<_>>();
        assert_eq!(strip(&l1), strip(&l2));
        assert_eq!(l1.len(), 6);
        assert_eq!(ck1.model, ck2.model);
        assert_eq!(ck1.iteration, 6);
    }

    #[test]
    fn resume_continues_identically() {
        let data = vec![toy_example("a", 20, 1)];
        let (_, full) = train_collect(&data, &toy_config(8), None).unwrap();
        let (mid, _) = train_collect(&data, &toy_config(3), None).unwrap();
        let (_, rest) = train_collect(&data, &toy_config(8), Some(mid)).unwrap();
        assert_eq!(rest.first().unwrap().iteration, 4);
        for (a, b) in full[3..].iter().zip(&rest) {
            assert_eq!(a.iteration, b.iteration);
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        }
    }

    #[test]
    fn initial_loss_near_unit_variance() {
        let data = vec![toy_example("a", 40, 3)];
        let mut cfg = toy_config(1);
        cfg.batch = 100;
        let (_, l) = train_collect(&data, &cfg, None).unwrap();
        assert!((l[0].loss - 1.0).abs() < 0.1, "loss {}", l[0].loss);
    }

    #[test]
    fn misaligned_utterance_named() {
        let mut ex = toy_example("broken", 10, 1);
        ex.loudness.values.pop();
        let err = train_collect(&[ex], &toy_config(1), None).unwrap_err();
        assert!(matches!(&err, Error::Input(m) if m.contains("broken")), "{err}");
    }

    #[test]
    fn resume_with_other_model_rejected() {
        let data = vec![toy_example("a", 10, 1)];
        let (ck, _) = train_collect(&data, &toy_config(1), None).unwrap();
        let mut cfg = toy_config(2);
        cfg.model.channels = 4;
        assert!(matches!(train_collect(&data, &cfg, Some(ck)), Err(Error::Config(_))));
    }

    #[test]
    fn nan_data_aborts_with_diagnostic() {
        let mut ex = toy_example("nan", 10, 1);
        let stats = FeatureStats::fit(std::slice::from_ref(&ex)).unwrap();
        let mut ck = initial_checkpoint(std::slice::from_ref(&ex), &toy_config(1)).unwrap();
        ck.stats = stats;
        ck.model.params.out_conv2.bias.data_mut()[0] = f64::NAN;
        ex.id = "nan".into();
        let err = train_collect(&[ex], &toy_config(1), Some(ck)).unwrap_err();
        assert!(matches!(&err, Error::NonFiniteLoss { iteration: 1, segment, .. } if segment.starts_with("nan[")), "{err}");
    }

    #[test]
    fn stats_cover_corpus() {
        let data = vec![toy_example("a", 20, 1), toy_example("b", 15, 2)];
        let s = FeatureStats::fit(&data).unwrap();
        assert!(s.f0.lo >= 200f64.ln() - 1e-9 && s.f0.hi <= 300f64.ln());
        assert!(s.mel.min < s.mel.max);
        assert!(s.loudness.lo < s.loudness.hi);
    }
}
