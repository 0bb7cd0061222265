//! DSVC checkpoint files.
//!
//! Layout (little-endian): the 4 bytes `DSVC`, a `u8` version, a `u32`
//! length and that many bytes of UTF-8 `key = value` lines, a `u32` step
//! count followed by the betas as `f64`, then records until end of file:
//! `u16` name length, name, `u32` rank, `rank × u32` dims, `f32` data.
//!
//! Records hold the model parameters in [`Params`](crate::denoiser::Params)
//! order, then `adam.m/<name>` and `adam.v/<name>` for each of them. Training
//! keeps all of these `f32`-representable, so the file is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{apply_train_entry, parse_entries, train_entries};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::features::io::ByteReader;
use crate::features::{MelStats, QuantRange};
use crate::rng::RngState;
use crate::schedule::NoiseSchedule;
use crate::tensor::Tensor;
use crate::trainer::{AdamState, FeatureStats, TrainConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSVC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Everything needed to convert with, or to continue training, a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub stats: FeatureStats,
    pub model: Denoiser,
    pub adam: AdamState,
    /// Completed updates.
    pub iteration: u64,
    /// Training generator position after the last update.
    pub rng: RngState,
}

impl Checkpoint {
    /// Rejects a checkpoint whose model does not have the given dimensions.
    pub fn check_model(&self, expected: &DenoiserConfig) -> Result<()> {
        if &self.model.config != expected {
            return Err(Error::Config(format!(
                "checkpoint model {:?} does not match expected {:?}",
                self.model.config, expected
            )));
        }
        Ok(())
    }

    fn config_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in train_entries(&self.config) {
            let _ = writeln!(out, "{k} = {v}");
        }
        let s = &self.stats;
        let state = [
            ("stats.mel_min", format!("{:?}", s.mel.min)),
            ("stats.mel_max", format!("{:?}", s.mel.max)),
            ("stats.f0_lo", format!("{:?}", s.f0.lo)),
            ("stats.f0_hi", format!("{:?}", s.f0.hi)),
            ("stats.loudness_lo", format!("{:?}", s.loudness.lo)),
            ("stats.loudness_hi", format!("{:?}", s.loudness.hi)),
            ("state.iteration", self.iteration.to_string()),
            ("state.adam_step", self.adam.step.to_string()),
            ("state.rng_seed", self.rng.seed.to_string()),
            ("state.rng_stream", self.rng.stream.to_string()),
            ("state.rng_word_pos", self.rng.word_pos.to_string()),
        ];
        for (k, v) in state {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        let block = self.config_block();
        out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        out.extend_from_slice(block.as_bytes());
        out.extend_from_slice(&(self.schedule.steps() as u32).to_le_bytes());
        for b in self.schedule.beta() {
            out.extend_from_slice(&b.to_le_bytes());
        }
        let params = self.model.params.flatten();
        if params.len() != self.adam.m.len() || params.len() != self.adam.v.len() {
            return Err(Error::State("optimizer state does not cover every parameter".into()));
        }
        for (name, t) in &params {
            write_record(&mut out, name, t)?;
        }
        for (prefix, moments) in [("adam.m/", &self.adam.m), ("adam.v/", &self.adam.v)] {
            for ((name, _), t) in params.iter().zip(moments) {
                write_record(&mut out, &format!("{prefix}{name}"), t)?;
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(0, "missing DSVC magic"));
        }
        let version = r.u8()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
        }
        let block_len = r.u32()? as usize;
        let block_at = r.offset();
        let block = std::str::from_utf8(r.take(block_len)?)
            .map_err(|e| Error::format(block_at, format!("config block is not UTF-8: {e}")))?;
        let header = Header::parse(block)?;

        let steps = r.u32()? as usize;
        let sched_at = r.offset();
        let mut beta = Vec::with_capacity(steps.min(1 << 16));
        for _ in 0..steps {
            beta.push(r.f64()?);
        }
        let schedule = NoiseSchedule::from_stored_betas(beta)
            .map_err(|e| Error::format(sched_at, format!("bad schedule table: {e}")))?;

        let mut model = Denoiser::new(header.config.model.clone(), 0)?;
        let names = model.params.names();
        {
            let mut slots = model.params.flatten_mut();
            for (name, slot) in names.iter().zip(slots.iter_mut()) {
                read_record_into(&mut r, name, slot)?;
            }
        }
        let mut adam = AdamState::new(model.params.flatten().into_iter().map(|(_, t)| t));
        adam.step = header.adam_step;
        for (prefix, moments) in [("adam.m/", &mut adam.m), ("adam.v/", &mut adam.v)] {
            for (name, slot) in names.iter().zip(moments.iter_mut()) {
                read_record_into(&mut r, &format!("{prefix}{name}"), slot)?;
            }
        }
        if r.remaining() != 0 {
            return Err(Error::format(r.offset(), "trailing bytes after the last record"));
        }
        Ok(Self {
            config: header.config,
            schedule,
            stats: header.stats,
            model,
            adam,
            iteration: header.iteration,
            rng: header.rng,
        })
    }
}

struct Header {
    config: TrainConfig,
    stats: FeatureStats,
    iteration: u64,
    adam_step: u64,
    rng: RngState,
}

impl Header {
    fn parse(block: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        let mut state: Vec<(String, String)> = Vec::new();
        for (k, v) in parse_entries(block)? {
            if !apply_train_entry(&mut config, &k, &v)? {
                state.push((k, v));
            }
        }
        let get = |key: &str| -> Result<&str> {
            state
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::Config(format!("checkpoint is missing `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint `{key}` is not a number")))
        };
        let int = |key: &str| -> Result<u128> {
            get(key)?
                .parse()
                .map_err(|_| Error::Config(format!("checkpoint `{key}` is not an integer")))
        };
        let known = [
            "stats.mel_min",
            "stats.mel_max",
            "stats.f0_lo",
            "stats.f0_hi",
            "stats.loudness_lo",
            "stats.loudness_hi",
            "state.iteration",
            "state.adam_step",
            "state.rng_seed",
            "state.rng_stream",
            "state.rng_word_pos",
        ];
        if let Some((k, _)) = state.iter().find(|(k, _)| !known.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown checkpoint key `{k}`")));
        }
        config.model.validate()?;
        Ok(Self {
            stats: FeatureStats {
                mel: MelStats {
                    min: num("stats.mel_min")?,
                    max: num("stats.mel_max")?,
                },
                f0: QuantRange {
                    lo: num("stats.f0_lo")?,
                    hi: num("stats.f0_hi")?,
                },
                loudness: QuantRange {
                    lo: num("stats.loudness_lo")?,
                    hi: num("stats.loudness_hi")?,
                },
            },
            iteration: int("state.iteration")? as u64,
            adam_step: int("state.adam_step")? as u64,
            rng: RngState {
                seed: int("state.rng_seed")? as u64,
                stream: int("state.rng_stream")? as u64,
                word_pos: int("state.rng_word_pos")?,
            },
            config,
        })
    }
}

fn write_record(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::State(format!("record name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(())
}

fn read_record_into(r: &mut ByteReader<'_>, expected: &str, slot: &mut Tensor) -> Result<()> {
    let at = r.offset();
    let len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(at, "record name is not UTF-8"))?;
    if name != expected {
        return Err(Error::format(at, format!("expected record `{expected}`, found `{name}`")));
    }
    let rank = r.u32()? as usize;
    let mut dims = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        dims.push(r.u32()? as usize);
    }
    if dims != slot.shape() {
        return Err(Error::Config(format!(
            "record `{name}` has shape {dims:?} but the configured model needs {:?}",
            slot.shape()
        )));
    }
    for v in slot.data_mut() {
        *v = r.f32()? as f64;
    }
    Ok(())
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ck.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}
