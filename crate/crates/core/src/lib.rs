//! Conditional denoising diffusion for singing voice conversion.
//!
//! A small reverse-mode autodiff engine ([`tape`]) drives a gated residual
//! denoiser ([`denoiser`]) that predicts the noise mixed into a mel
//! spectrogram, conditioned on phonetic posteriorgrams, quantized log-F0 and
//! loudness. [`features`] computes those inputs from audio, [`trainer`] fits
//! the model and writes checkpoints, [`diffusion`] samples from it, and
//! [`metrics`] scores the result.

pub mod config;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use denoiser::{ConditionInputs, Conditioner, Denoiser, DenoiserConfig};
pub use diffusion::{diffusion_loss, forward_sample, reverse_step, sample, EpsilonPredictor};
pub use error::{Error, Result};
pub use rng::{RngState, SeededRng};
pub use schedule::{NoiseSchedule, StepIndex};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use trainer::{Checkpoint, FeatureStats, TrainConfig, TrainingExample};
