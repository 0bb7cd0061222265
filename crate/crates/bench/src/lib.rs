//! Shared inputs for the kernel benchmarks.

use diffvc::features::{quantize, synth_ppg};
use diffvc::{rng, ConditionInputs, Conditioner, Denoiser, DenoiserConfig, SeededRng, Tensor};

/// Harmonic tone with a slow vibrato, `secs` long at `sample_rate`.
pub fn tone(sample_rate: u32, secs: f64) -> Vec<f64> {
    let n = (sample_rate as f64 * secs) as usize;
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let f0 = 220.0 + 6.0 * (std::f64::consts::TAU * 5.0 * t).sin();
            phase += std::f64::consts::TAU * f0 / sample_rate as f64;
            (1..=8).map(|h| (h as f64 * phase).sin() / h as f64).sum::<f64>() * 0.3
        })
        .collect()
}

/// A denoiser, its conditioner and a noisy input for `frames` frames.
pub fn denoiser_fixture(config: DenoiserConfig, frames: usize) -> (Denoiser, Conditioner, Tensor) {
    let mut rng = SeededRng::new(5);
    let ppg = synth_ppg(frames, config.ppg_dim, 2).unwrap();
    let ramp: Vec<f64> = (0..frames).map(|t| t as f64 / frames as f64).collect();
    let f0 = quantize(&ramp, 0.0, 1.0, config.n_bins).unwrap();
    let loud = quantize(&ramp.iter().rev().copied().collect::<Vec<_>>(), 0.0, 1.0, config.n_bins).unwrap();
    let model = Denoiser::new(config, 3).unwrap();
    let cond = model
        .build_conditioner(&ConditionInputs::new(ppg, &f0, &loud).unwrap())
        .unwrap();
    let y = rng::gaussian(&[frames, model.config.n_mels], &mut rng);
    (model, cond, y)
}

/// Two random cepstral sequences of the given lengths.
pub fn cepstra(a: usize, b: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = SeededRng::new(9);
    let mut seq = |n: usize| (0..n).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    (seq(a), seq(b))
}
