//! Finite-difference verification of the tape's gradients.
//!
//! Each check records a scalar function of some input tensors, back-propagates
//! once, and compares every input gradient entry against the central
//! difference `(f(x+h) − f(x−h)) / 2h` with `h = 1e-5`. The error measure is
//! `|a − n| / max(|a|, |n|, 1e-3)`, so near-zero gradients are compared in
//! absolute terms.

use crate::denoiser::{BoundDenoiser, ConditionInputs, Denoiser, DenoiserConfig};
use crate::diffusion::diffusion_loss;
use crate::error::{Error, Result};
use crate::features::PpgSequence;
use crate::rng::{gaussian, SeededRng};
use crate::schedule::NoiseSchedule;
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
const ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub entries: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

type Build<'a> = dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a;

fn evaluate(inputs: &[Tensor], build: &Build<'_>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t)).collect();
    let out = build(&mut tape, &vars)?;
    tape.value(out).item()
}

/// Compares analytic and numeric gradients of `build` at `inputs`.
pub fn check(name: &str, inputs: &[Tensor], build: &Build<'_>) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let out = build(&mut tape, &vars)?;
    if tape.value(out).numel() != 1 {
        return Err(Error::Contract(format!("gradient check `{name}` needs a scalar output")));
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut work = inputs.to_vec();
    let mut worst = 0.0f64;
    let mut entries = 0;
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let x = work[i].data()[j];
            work[i].data_mut()[j] = x + STEP;
            let plus = evaluate(&work, build)?;
            work[i].data_mut()[j] = x - STEP;
            let minus = evaluate(&work, build)?;
            work[i].data_mut()[j] = x;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(a, numeric));
            entries += 1;
        }
    }
    Ok(GradCheck {
        name: name.to_string(),
        max_rel_error: worst,
        entries,
    })
}

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    gaussian(shape, rng)
}

/// Gaussian values pushed at least 0.05 away from zero, so a ReLU kink is
/// never inside the difference stencil.
fn away_from_zero(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    let mut t = gaussian(shape, rng);
    for v in t.data_mut() {
        *v += 0.05f64.copysign(*v);
    }
    t
}

/// A fixed random weighting so that every output entry influences the scalar.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let mut rng = SeededRng::new(seed);
    let w = random(tape.shape(x), &mut rng);
    let w = tape.constant(&w);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn tiny_denoiser() -> DenoiserConfig {
    DenoiserConfig {
        n_mels: 3,
        ppg_dim: 4,
        cond_dim: 3,
        channels: 2,
        layers: 2,
        kernel_size: 3,
        dilation: 1,
        step_hidden: 4,
        n_bins: 5,
    }
}

/// Every differentiable op, then the full noise-regression loss through the
/// denoiser with respect to all of its parameters.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = SeededRng::new(seed);
    let mut out = Vec::new();
    let mut run = |name: &str, inputs: Vec<Tensor>, build: &Build<'_>| -> Result<()> {
        out.push(check(name, &inputs, build)?);
        Ok(())
    };

    run("matmul", vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)], &|t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, 1)
    })?;
    for dilation in [1, 2] {
        run(
            &format!("conv1d(k=3,d={dilation})"),
            vec![random(&[2, 7], &mut rng), random(&[3, 2, 3], &mut rng), random(&[3], &mut rng)],
            &move |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], dilation)?;
                weighted_sum(t, y, 2)
            },
        )?;
    }
    run(
        "conv1d(k=1)",
        vec![random(&[3, 5], &mut rng), random(&[2, 3, 1], &mut rng), random(&[2], &mut rng)],
        &|t, v| {
            let y = t.conv1d(v[0], v[1], v[2], 1)?;
            weighted_sum(t, y, 3)
        },
    )?;
    run("relu", vec![away_from_zero(&[4, 3], &mut rng)], &|t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 4)
    })?;
    run("tanh", vec![random(&[4, 3], &mut rng)], &|t, v| {
        let y = t.tanh(v[0]);
        weighted_sum(t, y, 5)
    })?;
    run("sigmoid", vec![random(&[4, 3], &mut rng)], &|t, v| {
        let y = t.sigmoid(v[0]);
        weighted_sum(t, y, 6)
    })?;
    run("swish", vec![random(&[4, 3], &mut rng)], &|t, v| {
        let y = t.swish(v[0]);
        weighted_sum(t, y, 7)
    })?;
    for (name, seed) in [("add", 8), ("sub", 9), ("mul", 10)] {
        run(name, vec![random(&[3, 3], &mut rng), random(&[3, 3], &mut rng)], &move |t, v| {
            let y = match name {
                "add" => t.add(v[0], v[1])?,
                "sub" => t.sub(v[0], v[1])?,
                _ => t.mul(v[0], v[1])?,
            };
            weighted_sum(t, y, seed)
        })?;
    }
    run("mul(x,x)", vec![random(&[2, 3], &mut rng)], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        weighted_sum(t, y, 11)
    })?;
    run("scale", vec![random(&[2, 3], &mut rng)], &|t, v| {
        let y = t.scale(v[0], -0.7);
        weighted_sum(t, y, 12)
    })?;
    run(
        "broadcast_add(rows)",
        vec![random(&[3, 4], &mut rng), random(&[1, 3], &mut rng)],
        &|t, v| {
            let y = t.broadcast_add(v[0], v[1], Axis::Rows)?;
            weighted_sum(t, y, 13)
        },
    )?;
    run(
        "broadcast_add(cols)",
        vec![random(&[3, 4], &mut rng), random(&[4], &mut rng)],
        &|t, v| {
            let y = t.broadcast_add(v[0], v[1], Axis::Cols)?;
            weighted_sum(t, y, 14)
        },
    )?;
    run("embedding", vec![random(&[5, 3], &mut rng)], &|t, v| {
        let y = t.embedding(v[0], &[4, 0, 4, 2])?;
        weighted_sum(t, y, 15)
    })?;
    run("transpose", vec![random(&[2, 5], &mut rng)], &|t, v| {
        let y = t.transpose(v[0])?;
        weighted_sum(t, y, 16)
    })?;
    run("slice_rows", vec![random(&[5, 3], &mut rng)], &|t, v| {
        let y = t.slice_rows(v[0], 1, 3)?;
        weighted_sum(t, y, 17)
    })?;
    run("sum", vec![random(&[3, 2], &mut rng)], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.sum(y))
    })?;
    run("mean", vec![random(&[3, 2], &mut rng)], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.mean(y))
    })?;
    run("mse", vec![random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)], &|t, v| t.mse(v[0], v[1]))?;

    let (name, inputs, build) = composite_loss(&mut rng)?;
    run(&name, inputs, &*build)?;
    Ok(out)
}

/// The loss of a small denoiser with randomized (including output) weights
/// as a function of every parameter tensor.
fn composite_loss(rng: &mut SeededRng) -> Result<(String, Vec<Tensor>, Box<Build<'static>>)> {
    let cfg = tiny_denoiser();
    let mut model = Denoiser::new(cfg.clone(), rng.next_u64())?;
    for p in model.params.flatten_mut() {
        let fresh = gaussian(p.shape(), rng);
        for (v, f) in p.data_mut().iter_mut().zip(fresh.data()) {
            *v = 0.5 * f;
        }
    }
    let frames = 6;
    let schedule = NoiseSchedule::linear(10, 1e-4, 0.06)?;
    let y0 = gaussian(&[frames, cfg.n_mels], rng);
    let eps = gaussian(&[frames, cfg.n_mels], rng);
    let ppg_values: Vec<f64> = (0..frames * cfg.ppg_dim).map(|_| rng.uniform()).collect();
    let inputs_cond = ConditionInputs {
        ppg: PpgSequence::new(ppg_values, frames, cfg.ppg_dim)?,
        f0_bins: (0..frames).map(|i| i % cfg.n_bins).collect(),
        loud_bins: (0..frames).map(|i| (2 * i + 1) % cfg.n_bins).collect(),
    };
    let params: Vec<Tensor> = model.params.flatten().into_iter().map(|(_, t)| t.clone()).collect();
    let template = model.params.clone();
    let build = move |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut it = vars.iter();
        let bound = BoundDenoiser {
            config: cfg.clone(),
            vars: template.map(|_, _| *it.next().expect("one var per parameter")),
        };
        let cond = bound.conditioner(tape, &inputs_cond)?;
        let t = schedule.step(7)?;
        diffusion_loss(tape, &schedule, &bound, &y0, cond, t, &eps)
    };
    Ok(("predict_eps+diffusion_loss".into(), params, Box::new(build)))
}
