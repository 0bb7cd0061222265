//! The noise-prediction network.
//!
//! ```text
//! y_t ─ Conv1x1 ─ ReLU ─(+ step)─┬─ block 1 ─ … ─ block N
//!                                 │     │skip          │skip
//!                                 └─────┴──── Σ / √N ─ Conv1x1 ─ ReLU ─ Conv1x1 ─ ε̂
//! block:  u = DilatedConv(h) + Conv1x1(e);  g = tanh(u[:C]) ⊙ σ(u[C:])
//!         h ← (h + Conv1x1(g)) / √2;  skip = Conv1x1(g)
//! ```
//!
//! The step index is encoded sinusoidally (64 sines then 64 cosines at
//! frequencies `10^(4i/63)`), passed through two FC + Swish layers, mapped to
//! the channel width and added once to every frame before the blocks. The
//! conditioner `e` is the per-frame sum of a PPG projection and two embedding
//! lookups (quantized log-F0 and loudness).

use crate::diffusion::EpsilonPredictor;
use crate::error::{Error, Result};
use crate::features::quantize::QuantizedContour;
use crate::features::PpgSequence;
use crate::rng::SeededRng;
use crate::schedule::StepIndex;
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

pub const STEP_ENCODING_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub n_mels: usize,
    pub ppg_dim: usize,
    pub cond_dim: usize,
    pub channels: usize,
    pub layers: usize,
    pub kernel_size: usize,
    pub dilation: usize,
    pub step_hidden: usize,
    pub n_bins: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            ppg_dim: 218,
            cond_dim: 256,
            channels: 256,
            layers: 20,
            kernel_size: 3,
            dilation: 1,
            step_hidden: 512,
            n_bins: 256,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            self.n_mels,
            self.ppg_dim,
            self.cond_dim,
            self.channels,
            self.layers,
            self.step_hidden,
            self.n_bins,
            self.dilation,
        ];
        if sizes.contains(&0) {
            return Err(Error::Config(format!("denoiser sizes must be positive: {self:?}")));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel_size)));
        }
        Ok(())
    }

    /// Number of scalar parameters, from the layer shapes alone.
    pub fn parameter_count(&self) -> usize {
        let (m, c, d, h, k) = (self.n_mels, self.channels, self.cond_dim, self.step_hidden, self.kernel_size);
        let prenet = self.ppg_dim * d + d;
        let tables = 2 * self.n_bins * d;
        let step = (STEP_ENCODING_DIM * h + h) + (h * h + h) + (h * c + c);
        let input = m * c + c;
        let block = (2 * c * c * k + 2 * c) + (2 * c * d + 2 * c) + 2 * (c * c + c);
        let output = (c * c + c) + (m * c + m);
        prenet + tables + step + input + self.layers * block + output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[in × out]`
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    /// `[out × in × kernel]`
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLayer<T> {
    pub dilated: Conv<T>,
    pub cond: Conv<T>,
    pub residual: Conv<T>,
    pub skip: Conv<T>,
}

/// Every learnable tensor of the network, generic over the storage so the
/// same structure holds owned values (`Tensor`) or tape handles (`Var`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub ppg_prenet: Linear<T>,
    pub f0_table: T,
    pub loud_table: T,
    pub step_fc1: Linear<T>,
    pub step_fc2: Linear<T>,
    pub step_proj: Linear<T>,
    pub input_conv: Conv<T>,
    pub layers: Vec<ResidualLayer<T>>,
    pub out_conv1: Conv<T>,
    pub out_conv2: Conv<T>,
}

impl<T> Params<T> {
    /// Applies `f` to every tensor in a fixed order with its dotted name.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Params<U> {
        let lin = |name: &str, l: &Linear<T>, f: &mut dyn FnMut(&str, &T) -> U| Linear {
            weight: f(&format!("{name}.weight"), &l.weight),
            bias: f(&format!("{name}.bias"), &l.bias),
        };
        let ppg_prenet = lin("ppg_prenet", &self.ppg_prenet, &mut f);
        let f0_table = f("f0_table", &self.f0_table);
        let loud_table = f("loud_table", &self.loud_table);
        let step_fc1 = lin("step_fc1", &self.step_fc1, &mut f);
        let step_fc2 = lin("step_fc2", &self.step_fc2, &mut f);
        let step_proj = lin("step_proj", &self.step_proj, &mut f);
        let conv = |name: &str, c: &Conv<T>, f: &mut dyn FnMut(&str, &T) -> U| Conv {
            weight: f(&format!("{name}.weight"), &c.weight),
            bias: f(&format!("{name}.bias"), &c.bias),
        };
        let input_conv = conv("input_conv", &self.input_conv, &mut f);
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| ResidualLayer {
                dilated: conv(&format!("layers.{i}.dilated"), &l.dilated, &mut f),
                cond: conv(&format!("layers.{i}.cond"), &l.cond, &mut f),
                residual: conv(&format!("layers.{i}.residual"), &l.residual, &mut f),
                skip: conv(&format!("layers.{i}.skip"), &l.skip, &mut f),
            })
            .collect();
        let out_conv1 = conv("out_conv1", &self.out_conv1, &mut f);
        let out_conv2 = conv("out_conv2", &self.out_conv2, &mut f);
        Params {
            ppg_prenet,
            f0_table,
            loud_table,
            step_fc1,
            step_fc2,
            step_proj,
            input_conv,
            layers,
            out_conv1,
            out_conv2,
        }
    }

    /// Dotted names of every tensor, in [`Params::map`] order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        let _ = self.map(|name, _| out.push(name.to_string()));
        out
    }

    /// `(name, tensor)` pairs in [`Params::map`] order.
    pub fn flatten(&self) -> Vec<(String, &T)> {
        let Params {
            ppg_prenet,
            f0_table,
            loud_table,
            step_fc1,
            step_fc2,
            step_proj,
            input_conv,
            layers,
            out_conv1,
            out_conv2,
        } = self;
        let mut refs: Vec<&T> = vec![&ppg_prenet.weight, &ppg_prenet.bias, f0_table, loud_table];
        for l in [step_fc1, step_fc2, step_proj] {
            refs.extend([&l.weight, &l.bias]);
        }
        refs.extend([&input_conv.weight, &input_conv.bias]);
        for l in layers {
            for c in [&l.dilated, &l.cond, &l.residual, &l.skip] {
                refs.extend([&c.weight, &c.bias]);
            }
        }
        for c in [out_conv1, out_conv2] {
            refs.extend([&c.weight, &c.bias]);
        }
        self.names().into_iter().zip(refs).collect()
    }

    /// Mutable references to every tensor, in [`Params::map`] order.
    pub fn flatten_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        let Params {
            ppg_prenet,
            f0_table,
            loud_table,
            step_fc1,
            step_fc2,
            step_proj,
            input_conv,
            layers,
            out_conv1,
            out_conv2,
        } = self;
        out.extend([&mut ppg_prenet.weight, &mut ppg_prenet.bias, f0_table, loud_table]);
        for l in [step_fc1, step_fc2, step_proj] {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out.extend([&mut input_conv.weight, &mut input_conv.bias]);
        for l in layers {
            for c in [&mut l.dilated, &mut l.cond, &mut l.residual, &mut l.skip] {
                out.extend([&mut c.weight, &mut c.bias]);
            }
        }
        for c in [out_conv1, out_conv2] {
            out.extend([&mut c.weight, &mut c.bias]);
        }
        out
    }
}

/// Sinusoidal encoding of a (possibly non-integer) step value: entry `i` of
/// the first half is `sin(10^(4i/63) · t)`, of the second half the cosine.
pub fn step_encoding(t: f64) -> Vec<f64> {
    let half = STEP_ENCODING_DIM / 2;
    let freqs: Vec<f64> = (0..half)
        .map(|i| 10f64.powf(i as f64 * 4.0 / (half - 1) as f64))
        .collect();
    freqs
        .iter()
        .map(|f| (f * t).sin())
        .chain(freqs.iter().map(|f| (f * t).cos()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepEmbedding {
    /// The raw 128-dimensional encoding.
    pub t_emb: Tensor,
    /// After FC → Swish → FC → Swish.
    pub projected: Tensor,
}

/// Fused per-frame conditioner, `[frames × cond_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub e: Tensor,
}

impl Conditioner {
    pub fn frames(&self) -> usize {
        self.e.shape()[0]
    }
}

/// Conditioning inputs of one utterance or segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionInputs {
    pub ppg: PpgSequence,
    pub f0_bins: Vec<usize>,
    pub loud_bins: Vec<usize>,
}

impl ConditionInputs {
    pub fn new(ppg: PpgSequence, f0: &QuantizedContour, loudness: &QuantizedContour) -> Result<Self> {
        if ppg.frames != f0.bins.len() || ppg.frames != loudness.bins.len() {
            return Err(Error::Input(format!(
                "conditioner frame counts differ: ppg {}, f0 {}, loudness {}",
                ppg.frames,
                f0.bins.len(),
                loudness.bins.len()
            )));
        }
        Ok(Self {
            ppg,
            f0_bins: f0.bins.clone(),
            loud_bins: loudness.bins.clone(),
        })
    }

    pub fn frames(&self) -> usize {
        self.ppg.frames
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            ppg: self.ppg.slice(start, len),
            f0_bins: self.f0_bins[start..start + len].to_vec(),
            loud_bins: self.loud_bins[start..start + len].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: Params<Tensor>,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = round_f32((2.0 * rng.uniform() - 1.0) * bound);
    }
    t
}

fn linear_init(fan_in: usize, out: usize, rng: &mut SeededRng) -> Linear<Tensor> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Linear {
        weight: uniform_tensor(&[fan_in, out], bound, rng),
        bias: uniform_tensor(&[out], bound, rng),
    }
}

fn conv_init(c_in: usize, c_out: usize, kernel: usize, rng: &mut SeededRng) -> Conv<Tensor> {
    let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
    Conv {
        weight: uniform_tensor(&[c_out, c_in, kernel], bound, rng),
        bias: uniform_tensor(&[c_out], bound, rng),
    }
}

fn embedding_init(rows: usize, dim: usize, rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(&[rows, dim]);
    rng.fill_normal(t.data_mut());
    for v in t.data_mut() {
        *v = round_f32(*v * 0.01);
    }
    t
}

impl Denoiser {
    /// Fan-in uniform weights, `N(0, 0.01²)` embeddings and a zero final
    /// convolution, so a fresh model predicts ε̂ = 0. All values are
    /// representable as `f32`.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut SeededRng::new(seed);
        let c = &config;
        let ch = c.channels;
        let params = Params {
            ppg_prenet: linear_init(c.ppg_dim, c.cond_dim, rng),
            f0_table: embedding_init(c.n_bins, c.cond_dim, rng),
            loud_table: embedding_init(c.n_bins, c.cond_dim, rng),
            step_fc1: linear_init(STEP_ENCODING_DIM, c.step_hidden, rng),
            step_fc2: linear_init(c.step_hidden, c.step_hidden, rng),
            step_proj: linear_init(c.step_hidden, ch, rng),
            input_conv: conv_init(c.n_mels, ch, 1, rng),
            layers: (0..c.layers)
                .map(|_| ResidualLayer {
                    dilated: conv_init(ch, 2 * ch, c.kernel_size, rng),
                    cond: conv_init(c.cond_dim, 2 * ch, 1, rng),
                    residual: conv_init(ch, ch, 1, rng),
                    skip: conv_init(ch, ch, 1, rng),
                })
                .collect(),
            out_conv1: conv_init(ch, ch, 1, rng),
            out_conv2: Conv {
                weight: Tensor::zeros(&[c.n_mels, ch, 1]),
                bias: Tensor::zeros(&[c.n_mels]),
            },
        };
        Ok(Self { config, params })
    }

    /// Expected shape of every named tensor for this configuration.
    pub fn expected_shapes(config: &DenoiserConfig) -> Result<Vec<(String, Vec<usize>)>> {
        let model = Self::new(config.clone(), 0)?;
        Ok(model
            .params
            .flatten()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.flatten().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on `tape`; trainable leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDenoiser {
        let vars = self.params.map(|_, t| if trainable { tape.param(t) } else { tape.constant(t) });
        BoundDenoiser {
            config: self.config.clone(),
            vars,
        }
    }

    pub fn encode_step(&self, t: StepIndex) -> Result<StepEmbedding> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let (raw, projected) = bound.step_hidden(&mut tape, t.get() as f64)?;
        Ok(StepEmbedding {
            t_emb: tape.value(raw).clone().reshape(&[STEP_ENCODING_DIM])?,
            projected: tape.value(projected).clone().reshape(&[self.config.step_hidden])?,
        })
    }

    pub fn build_conditioner(&self, inputs: &ConditionInputs) -> Result<Conditioner> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let e = bound.conditioner(&mut tape, inputs)?;
        Ok(Conditioner {
            e: tape.value(e).clone().with_requires_grad(false),
        })
    }

    /// ε̂ for `y_t: [frames × n_mels]` given a prebuilt conditioner.
    pub fn predict(&self, y_t: &Tensor, t: StepIndex, cond: &Conditioner) -> Result<Tensor> {
        let mut tape = Tape::new();
        let y = tape.constant(y_t);
        let e = tape.constant(&cond.e);
        let out = self.predict_eps(&mut tape, y, t, e)?;
        Ok(tape.value(out).clone().with_requires_grad(false))
    }
}

impl EpsilonPredictor for Denoiser {
    fn mel_bins(&self) -> usize {
        self.config.n_mels
    }

    fn predict_eps(&self, tape: &mut Tape, y_t: Var, t: StepIndex, cond: Var) -> Result<Var> {
        let bound = self.bind(tape, false);
        bound.predict_eps(tape, y_t, t, cond)
    }
}

/// Parameters recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundDenoiser {
    pub config: DenoiserConfig,
    pub vars: Params<Var>,
}

impl BoundDenoiser {
    fn linear(&self, tape: &mut Tape, x: Var, l: &Linear<Var>) -> Result<Var> {
        let y = tape.matmul(x, l.weight)?;
        tape.broadcast_add(y, l.bias, Axis::Cols)
    }

    fn conv(&self, tape: &mut Tape, x: Var, c: &Conv<Var>) -> Result<Var> {
        tape.conv1d(x, c.weight, c.bias, self.config.dilation)
    }

    /// Returns the raw `[1 × 128]` encoding and the `[1 × step_hidden]` output
    /// of the two FC + Swish layers.
    fn step_hidden(&self, tape: &mut Tape, t: f64) -> Result<(Var, Var)> {
        let enc = Tensor::new(&[1, STEP_ENCODING_DIM], step_encoding(t))?;
        let raw = tape.constant(&enc);
        let v = &self.vars;
        let h = self.linear(tape, raw, &v.step_fc1)?;
        let h = tape.swish(h);
        let h = self.linear(tape, h, &v.step_fc2)?;
        Ok((raw, tape.swish(h)))
    }

    /// `e = FC(ppg) + f0_table[f0] + loud_table[loudness]`, `[frames × cond_dim]`.
    pub fn conditioner(&self, tape: &mut Tape, inputs: &ConditionInputs) -> Result<Var> {
        if inputs.ppg.dim != self.config.ppg_dim {
            return Err(Error::Config(format!(
                "PPG dimension {} does not match model's {}",
                inputs.ppg.dim, self.config.ppg_dim
            )));
        }
        if inputs.f0_bins.len() != inputs.frames() || inputs.loud_bins.len() != inputs.frames() {
            return Err(Error::Input("conditioner inputs have different frame counts".into()));
        }
        let ppg = Tensor::new(&[inputs.frames(), inputs.ppg.dim], inputs.ppg.values.clone())?;
        let x = tape.constant(&ppg);
        let v = &self.vars;
        let p = self.linear(tape, x, &v.ppg_prenet)?;
        let f = tape.embedding(v.f0_table, &inputs.f0_bins)?;
        let l = tape.embedding(v.loud_table, &inputs.loud_bins)?;
        let e = tape.add(p, f)?;
        tape.add(e, l)
    }
}

impl EpsilonPredictor for BoundDenoiser {
    fn mel_bins(&self) -> usize {
        self.config.n_mels
    }

    fn predict_eps(&self, tape: &mut Tape, y_t: Var, t: StepIndex, cond: Var) -> Result<Var> {
        let cfg = &self.config;
        let v = &self.vars;
        let (frames, mels) = tape.value(y_t).dims2("predict_eps")?;
        if mels != cfg.n_mels {
            return Err(Error::dim("predict_eps", tape.shape(y_t), &[frames, cfg.n_mels]));
        }
        let (cond_frames, cond_dim) = tape.value(cond).dims2("predict_eps conditioner")?;
        if cond_frames != frames || cond_dim != cfg.cond_dim {
            return Err(Error::dim("predict_eps conditioner", tape.shape(cond), &[frames, cfg.cond_dim]));
        }

        let x = tape.transpose(y_t)?;
        let h = self.conv(tape, x, &v.input_conv)?;
        let h = tape.relu(h);
        let (_, step) = self.step_hidden(tape, t.get() as f64)?;
        let step = self.linear(tape, step, &v.step_proj)?;
        let mut h = tape.broadcast_add(h, step, Axis::Rows)?;

        let e = tape.transpose(cond)?;
        let c = cfg.channels;
        let res_scale = std::f64::consts::FRAC_1_SQRT_2;
        let mut skip_sum: Option<Var> = None;
        for layer in &v.layers {
            let u = self.conv(tape, h, &layer.dilated)?;
            let ce = self.conv(tape, e, &layer.cond)?;
            let u = tape.add(u, ce)?;
            let a = tape.slice_rows(u, 0, c)?;
            let b = tape.slice_rows(u, c, c)?;
            let a = tape.tanh(a);
            let b = tape.sigmoid(b);
            let g = tape.mul(a, b)?;
            let r = self.conv(tape, g, &layer.residual)?;
            let sum = tape.add(h, r)?;
            h = tape.scale(sum, res_scale);
            let s = self.conv(tape, g, &layer.skip)?;
            skip_sum = Some(match skip_sum {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let skip = skip_sum.expect("at least one residual layer");
        let skip = tape.scale(skip, 1.0 / (cfg.layers as f64).sqrt());
        let o = self.conv(tape, skip, &v.out_conv1)?;
        let o = tape.relu(o);
        let o = self.conv(tape, o, &v.out_conv2)?;
        tape.transpose(o)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ppg::synth_ppg;
    use crate::rng::gaussian;

    fn toy() -> DenoiserConfig {
        DenoiserConfig {
            n_mels: 8,
            ppg_dim: 6,
            cond_dim: 10,
            channels: 4,
            layers: 3,
            step_hidden: 16,
            n_bins: 256,
            ..DenoiserConfig::default()
        }
    }

    fn inputs(frames: usize, seed: u64) -> ConditionInputs {
        let ppg = synth_ppg(frames, 6, seed).unwrap();
        ConditionInputs {
            ppg,
            f0_bins: (0..frames).map(|i| (i * 37 + seed as usize) % 256).collect(),
            loud_bins: (0..frames).map(|i| (i * 11 + 3) % 256).collect(),
        }
    }

    /// Gives the zero-initialized output layer random weights.
    fn randomized(cfg: DenoiserConfig, seed: u64) -> Denoiser {
        let mut m = Denoiser::new(cfg, seed).unwrap();
        let mut rng = SeededRng::new(seed + 1000);
        for v in m.params.out_conv2.weight.data_mut() {
            *v = 0.3 * rng.normal();
        }
        m
    }

    #[test]
    fn step_encoding_values() {
        let zero = step_encoding(0.0);
        assert_eq!(zero.len(), 128);
        assert!(zero[..64].iter().all(|&v| v == 0.0));
        assert!(zero[64..].iter().all(|&v| v == 1.0));
        let one = step_encoding(1.0);
        assert!((one[0] - 0.841_471).abs() < 1e-6);
        // highest frequency is 10^4
        assert_eq!(one[63], (10f64.powf(4.0)).sin());
    }

    #[test]
    fn step_encoding_injective_over_default_steps() {
        let encs: Vec<Vec<f64>> = (1..=100).map(|t| step_encoding(t as f64)).collect();
        let mut min = f64::INFINITY;
        for i in 0..encs.len() {
            for j in i + 1..encs.len() {
                let d: f64 = encs[i].iter().zip(&encs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                min = min.min(d.sqrt());
            }
        }
        assert!(min > 0.0);
    }

    #[test]
    fn encode_step_shapes() {
        let m = Denoiser::new(toy(), 1).unwrap();
        let s = m.encode_step(StepIndex::new(3, 100).unwrap()).unwrap();
        assert_eq!(s.t_emb.shape(), &[128]);
        assert_eq!(s.projected.shape(), &[16]);
    }

    #[test]
    fn parameter_count_matches_formula() {
        for cfg in [toy(), DenoiserConfig { layers: 4, channels: 32, n_mels: 16, ..toy() }] {
            let m = Denoiser::new(cfg.clone(), 0).unwrap();
            assert_eq!(m.parameter_count(), cfg.parameter_count());
        }
        // default configuration, by hand
        let c = DenoiserConfig::default();
        let hand = (218 * 256 + 256)
            + 2 * 256 * 256
            + (128 * 512 + 512)
            + (512 * 512 + 512)
            + (512 * 256 + 256)
            + (80 * 256 + 256)
            + 20 * ((512 * 256 * 3 + 512) + (512 * 256 + 512) + 2 * (256 * 256 + 256))
            + (256 * 256 + 256)
            + (80 * 256 + 80);
        assert_eq!(c.parameter_count(), hand);
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let m = Denoiser::new(toy(), 0).unwrap();
        let names: Vec<String> = m.params.flatten().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "ppg_prenet.weight");
        assert_eq!(names.last().unwrap(), "out_conv2.bias");
        let mut m2 = m.clone();
        assert_eq!(m2.params.flatten_mut().len(), names.len());
    }

    #[test]
    fn conditioner_zero_and_locality() {
        let mut m = Denoiser::new(toy(), 2).unwrap();
        m.params.ppg_prenet.weight = Tensor::zeros(&[6, 10]);
        m.params.ppg_prenet.bias = Tensor::zeros(&[10]);
        m.params.f0_table = Tensor::zeros(&[256, 10]);
        m.params.loud_table = Tensor::zeros(&[256, 10]);
        let e = m.build_conditioner(&inputs(5, 1)).unwrap();
        assert!(e.e.data().iter().all(|&v| v == 0.0));

        let m = Denoiser::new(toy(), 2).unwrap();
        let a = inputs(5, 1);
        let mut b = a.clone();
        b.loud_bins[2] = (b.loud_bins[2] + 1) % 256;
        let ea = m.build_conditioner(&a).unwrap().e;
        let eb = m.build_conditioner(&b).unwrap().e;
        for t in 0..5 {
            let changed = (0..10).any(|d| ea.at2(t, d) != eb.at2(t, d));
            assert_eq!(changed, t == 2, "frame {t}");
        }
    }

    #[test]
    fn default_conditioner_shape() {
        let m = Denoiser::new(DenoiserConfig { layers: 1, channels: 8, ..DenoiserConfig::default() }, 0).unwrap();
        let frames = 7;
        let inp = ConditionInputs {
            ppg: synth_ppg(frames, 218, 0).unwrap(),
            f0_bins: vec![0; frames],
            loud_bins: vec![255; frames],
        };
        assert_eq!(m.build_conditioner(&inp).unwrap().e.shape(), &[7, 256]);
    }

    #[test]
    fn conditioner_frame_mismatch() {
        let q = QuantizedContour { bins: vec![0; 4], lo: 0.0, hi: 1.0 };
        let q5 = QuantizedContour { bins: vec![0; 5], lo: 0.0, hi: 1.0 };
        let err = ConditionInputs::new(synth_ppg(4, 6, 0).unwrap(), &q, &q5).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn fresh_model_predicts_zero_with_input_shape() {
        let m = Denoiser::new(toy(), 3).unwrap();
        let cond = m.build_conditioner(&inputs(9, 0)).unwrap();
        let y = gaussian(&[9, 8], &mut SeededRng::new(1));
        let out = m.predict(&y, StepIndex::new(5, 50).unwrap(), &cond).unwrap();
        assert_eq!(out.shape(), &[9, 8]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_mel_width_is_dimension_error() {
        let m = Denoiser::new(toy(), 3).unwrap();
        let cond = m.build_conditioner(&inputs(4, 0)).unwrap();
        let y = Tensor::zeros(&[4, 7]);
        assert!(matches!(m.predict(&y, StepIndex::new(1, 50).unwrap(), &cond), Err(Error::Dimension { .. })));
    }

    #[test]
    fn shift_equivariance_on_interior_frames() {
        let cfg = toy();
        let m = randomized(cfg.clone(), 4);
        let frames = 40;
        let k = 5;
        let inp = inputs(frames + k, 7);
        let y = gaussian(&[frames + k, 8], &mut SeededRng::new(2));
        let t = StepIndex::new(9, 50).unwrap();

        let cond_a = m.build_conditioner(&inp.slice(0, frames)).unwrap();
        let ya = Tensor::new(&[frames, 8], y.data()[..frames * 8].to_vec()).unwrap();
        let out_a = m.predict(&ya, t, &cond_a).unwrap();

        let cond_b = m.build_conditioner(&inp.slice(k, frames)).unwrap();
        let yb = Tensor::new(&[frames, 8], y.data()[k * 8..(frames + k) * 8].to_vec()).unwrap();
        let out_b = m.predict(&yb, t, &cond_b).unwrap();

        // receptive field radius: one frame per layer for K = 3
        let margin = cfg.layers;
        for f in (k + margin)..(frames - margin) {
            for d in 0..8 {
                assert_eq!(out_a.at2(f, d), out_b.at2(f - k, d), "frame {f} bin {d}");
            }
        }
    }

    #[test]
    fn frame_count_does_not_change_parameters() {
        let m = randomized(toy(), 5);
        let before = m.clone();
        let t = StepIndex::new(2, 50).unwrap();
        for frames in [1, 64] {
            let cond = m.build_conditioner(&inputs(frames, 1)).unwrap();
            let y = gaussian(&[frames, 8], &mut SeededRng::new(frames as u64));
            let out = m.predict(&y, t, &cond).unwrap();
            assert_eq!(out.shape(), &[frames, 8]);
        }
        assert_eq!(m, before);
    }
}
