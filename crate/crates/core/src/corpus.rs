//! On-disk corpus layout: one directory per utterance holding FEAT1 files.
//!
//! ```text
//! <root>/<utterance id>/mel.feat    [frames × n_mels]  natural-log mel
//!                       f0.feat     [frames]           Hz, 0 = unvoiced
//!                       loud.feat   [frames]           log A-weighted power
//!                       ppg.feat    [frames × dim]     posteriorgram
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{
    load_ppg, F0Contour, FeatureArray, LoudnessContour, MelConfig, MelScale, MelSpectrogram, PpgSequence,
};
use crate::trainer::TrainingExample;

pub const MEL_FILE: &str = "mel.feat";
pub const F0_FILE: &str = "f0.feat";
pub const LOUDNESS_FILE: &str = "loud.feat";
pub const PPG_FILE: &str = "ppg.feat";

/// Subdirectory names of `root`, sorted.
pub fn list_utterances(root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    let mut ids = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn save_mel(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<()> {
    let log = mel.to_log()?;
    FeatureArray::from_f64(&[log.frames, log.n_mels], &log.values)?.save(path)
}

pub fn load_mel(path: impl AsRef<Path>, cfg: &MelConfig) -> Result<MelSpectrogram> {
    let feat = FeatureArray::load(path)?;
    let (_, n_mels) = feat.dims2()?;
    MelSpectrogram::new(feat.to_f64(), n_mels, cfg.hop_size, cfg.sample_rate, MelScale::Log)
}

pub fn save_contour(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    FeatureArray::from_f64(&[values.len()], values)?.save(path)
}

pub fn load_contour(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let feat = FeatureArray::load(path)?;
    feat.len1()?;
    Ok(feat.to_f64())
}

pub fn load_f0(path: impl AsRef<Path>) -> Result<F0Contour> {
    F0Contour::from_hz(load_contour(path)?)
}

pub fn load_loudness(path: impl AsRef<Path>) -> Result<LoudnessContour> {
    Ok(LoudnessContour {
        values: load_contour(path)?,
    })
}

/// Writes the four feature files of one utterance into `dir`.
pub fn save_utterance(
    dir: impl AsRef<Path>,
    mel: &MelSpectrogram,
    f0: &F0Contour,
    loudness: &LoudnessContour,
    ppg: &PpgSequence,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_mel(mel, dir.join(MEL_FILE))?;
    save_contour(&f0.hz, dir.join(F0_FILE))?;
    save_contour(&loudness.values, dir.join(LOUDNESS_FILE))?;
    ppg.save(dir.join(PPG_FILE))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Input(format!("{}: {io}", path.display())),
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Loads one utterance directory and checks that its features are aligned.
pub fn load_utterance(dir: impl AsRef<Path>, cfg: &MelConfig) -> Result<TrainingExample> {
    let dir = dir.as_ref();
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let file = |name: &str| -> PathBuf { dir.join(name) };
    let ex = TrainingExample {
        mel: with_path(&file(MEL_FILE), load_mel(file(MEL_FILE), cfg))?,
        f0: with_path(&file(F0_FILE), load_f0(file(F0_FILE)))?,
        loudness: with_path(&file(LOUDNESS_FILE), load_loudness(file(LOUDNESS_FILE)))?,
        ppg: with_path(&file(PPG_FILE), load_ppg(file(PPG_FILE)))?,
        id,
    };
    ex.check_alignment()?;
    Ok(ex)
}

/// Every utterance under `root`, in sorted order.
pub fn load_corpus(root: impl AsRef<Path>, cfg: &MelConfig) -> Result<Vec<TrainingExample>> {
    let root = root.as_ref();
    let ids = list_utterances(root)?;
    if ids.is_empty() {
        return Err(Error::Input(format!("no utterance directories under {}", root.display())));
    }
    ids.iter().map(|id| load_utterance(root.join(id), cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::synth_ppg;

    fn example(frames: usize) -> (MelSpectrogram, F0Contour, LoudnessContour, PpgSequence) {
        (
            MelSpectrogram::new((0..frames * 4).map(|i| -(i as f64) * 0.25).collect(), 4, 240, 24_000, MelScale::Log)
                .unwrap(),
            F0Contour::from_hz((0..frames).map(|t| if t % 2 == 0 { 0.0 } else { 150.0 }).collect()).unwrap(),
            LoudnessContour {
                values: (0..frames).map(|t| -(t as f64)).collect(),
            },
            synth_ppg(frames, 3, 1).unwrap(),
        )
    }

    #[test]
    fn round_trip_through_directories() {
        let root = tempfile::tempdir().unwrap();
        let (m, f, l, p) = example(5);
        save_utterance(root.path().join("b"), &m, &f, &l, &p).unwrap();
        save_utterance(root.path().join("a"), &m, &f, &l, &p).unwrap();
        let cfg = MelConfig::default();
        let corpus = load_corpus(root.path(), &cfg).unwrap();
        assert_eq!(corpus.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(corpus[0].mel, m);
        assert_eq!(corpus[0].f0, f);
        assert_eq!(corpus[0].loudness, l);
    }

    #[test]
    fn misaligned_files_name_the_utterance() {
        let root = tempfile::tempdir().unwrap();
        let (m, f, _, p) = example(5);
        let short = LoudnessContour { values: vec![0.0; 4] };
        save_utterance(root.path().join("odd"), &m, &f, &short, &p).unwrap();
        let err = load_corpus(root.path(), &MelConfig::default()).unwrap_err();
        assert!(matches!(&err, Error::Input(msg) if msg.contains("odd")), "{err}");
    }

    #[test]
    fn missing_file_reports_path() {
        let root = tempfile::tempdir().unwrap();
        fs::create_dir(root.path().join("x")).unwrap();
        let err = load_corpus(root.path(), &MelConfig::default()).unwrap_err();
        assert!(err.to_string().contains("mel.feat"), "{err}");
    }
}
