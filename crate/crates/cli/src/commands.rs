use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use diffvc::config::RunConfig;
use diffvc::corpus::{self, F0_FILE, MEL_FILE};
use diffvc::features::{self, invert_mel, load_ppg, read_wav, synth_ppg, write_wav, MelScale, MelSpectrogram};
use diffvc::metrics::{evaluate_pair, EvalRow};
use diffvc::trainer::{self, load_checkpoint, save_checkpoint, TrainEvent};
use diffvc::{gradcheck, sample, Error, NoiseSchedule};

use crate::{ConvertArgs, EvalArgs, ExtractArgs, GradcheckArgs, ScheduleArgs, TrainArgs};

fn run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

pub fn extract(a: &ExtractArgs) -> Result<ExitCode> {
    let cfg = run_config(a.config.as_deref())?;
    let (wav, sr) = read_wav(&a.wav).with_context(|| format!("reading {}", a.wav.display()))?;
    let extra = a
        .extra_f0
        .iter()
        .map(|p| corpus::load_f0(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let f = features::extract(&wav, sr, &cfg.features, &extra)?;
    let ppg = match (&a.ppg, a.synth_ppg) {
        (Some(path), _) => load_ppg(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(seed)) => synth_ppg(f.mel.frames, cfg.train.model.ppg_dim, seed)?,
        (None, None) => unreachable!("clap requires a PPG source"),
    };
    if ppg.frames != f.mel.frames {
        bail!(Error::Input(format!(
            "PPG has {} frames but the audio yields {}",
            ppg.frames, f.mel.frames
        )));
    }
    corpus::save_utterance(&a.out, &f.mel, &f.f0, &f.loudness, &ppg)?;
    eprintln!("wrote {} frames to {}", f.mel.frames, a.out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(a: &TrainArgs) -> Result<ExitCode> {
    let mut cfg = run_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let data = corpus::load_corpus(&a.data, &cfg.features.mel)?;
    let resume = match &a.resume {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?),
        None => None,
    };
    let csv_path = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let append = resume.is_some() && csv_path.exists();
    let file = if append {
        OpenOptions::new().append(true).open(&csv_path)?
    } else {
        File::create(&csv_path)?
    };
    let mut csv = BufWriter::new(file);
    if !append {
        writeln!(csv, "{}", trainer::loss_csv_header())?;
    }

    let mut first = None;
    let mut last = None;
    let ck = trainer::train(&data, &cfg.train, resume, &mut |ev| {
        match ev {
            TrainEvent::Loss(r) => {
                first.get_or_insert(r.loss);
                last = Some(r.loss);
                writeln!(csv, "{}", trainer::loss_csv_row(&r))?;
            }
            TrainEvent::Checkpoint(ck) => {
                csv.flush()?;
                save_checkpoint(ck, &a.out)?;
            }
        }
        Ok(())
    })?;
    csv.flush()?;
    eprintln!(
        "trained to iteration {} (loss {} -> {}); checkpoint {}",
        ck.iteration,
        first.map_or("-".into(), |v| format!("{v:.5}")),
        last.map_or("-".into(), |v| format!("{v:.5}")),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn convert(a: &ConvertArgs) -> Result<ExitCode> {
    let ck = load_checkpoint(&a.ckpt).with_context(|| format!("loading checkpoint {}", a.ckpt.display()))?;
    let model_cfg = &ck.model.config;
    let ppg = load_ppg(&a.ppg).with_context(|| format!("reading {}", a.ppg.display()))?;
    if ppg.dim != model_cfg.ppg_dim {
        bail!(Error::Config(format!(
            "PPG dimension {} does not match the checkpoint's {}",
            ppg.dim, model_cfg.ppg_dim
        )));
    }
    let f0 = corpus::load_f0(&a.f0).with_context(|| format!("reading {}", a.f0.display()))?;
    let f0 = f0.shifted(a.f0_shift * std::f64::consts::LN_2 / 12.0);
    let loud = corpus::load_loudness(&a.loud).with_context(|| format!("reading {}", a.loud.display()))?;

    let inputs = ck.stats.condition_inputs(&ppg, &f0, &loud, model_cfg.n_bins)?;
    let cond = ck.model.build_conditioner(&inputs)?;
    let frames = inputs.frames();
    let y = sample(&ck.schedule, &ck.model, &cond.e, frames, a.seed)?;

    let mut mel_cfg = match &a.config {
        Some(p) => run_config(Some(p))?.features.mel,
        None => Default::default(),
    };
    if a.config.is_none() {
        mel_cfg.n_mels = model_cfg.n_mels;
    }
    let mel = MelSpectrogram::new(
        y.into_data(),
        model_cfg.n_mels,
        mel_cfg.hop_size,
        mel_cfg.sample_rate,
        MelScale::Normalized(Some(ck.stats.mel)),
    )?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    corpus::save_mel(&mel, &a.out)?;
    if let Some(path) = &a.wav {
        let audio = invert_mel(&mel, &mel_cfg, a.griffin_lim_iters)?;
        write_wav(path, &audio, mel_cfg.sample_rate)?;
    }
    eprintln!("wrote {frames} frames to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval_one(id: &str, reference: &Path, hyp: &Path) -> Result<EvalRow> {
    let mel_cfg = Default::default();
    let (rd, hd) = (reference.join(id), hyp.join(id));
    let rm = corpus::load_mel(rd.join(MEL_FILE), &mel_cfg).with_context(|| format!("{id}: reference mel"))?;
    let hm = corpus::load_mel(hd.join(MEL_FILE), &mel_cfg).with_context(|| format!("{id}: hypothesis mel"))?;
    let (rf, hf) = (rd.join(F0_FILE), hd.join(F0_FILE));
    let f0 = if rf.exists() && hf.exists() {
        Some((corpus::load_f0(&rf)?, corpus::load_f0(&hf)?))
    } else {
        None
    };
    Ok(evaluate_pair(id, &rm, &hm, f0.as_ref().map(|(r, h)| (r, h)))?)
}

pub fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let refs = corpus::list_utterances(&a.reference)?;
    let hyps = corpus::list_utterances(&a.hyp)?;
    let matched: Vec<&String> = refs.iter().filter(|id| hyps.contains(id)).collect();
    let unmatched: Vec<String> = refs
        .iter()
        .filter(|id| !hyps.contains(id))
        .map(|id| format!("{id} (reference only)"))
        .chain(hyps.iter().filter(|id| !refs.contains(id)).map(|id| format!("{id} (hypothesis only)")))
        .collect();
    for u in &unmatched {
        eprintln!("warning: skipping unmatched utterance {u}");
    }

    let rows = matched
        .par_iter()
        .map(|id| eval_one(id, &a.reference, &a.hyp))
        .collect::<Result<Vec<_>>>()?;

    let mut out = String::from("utterance_id,mcd_db,fpc,frames_ref,frames_hyp\n");
    for r in &rows {
        let fpc = r.fpc.map_or("NA".to_string(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{},{:.6},{},{},{}\n",
            r.utterance_id, r.mcd_db, fpc, r.frames_ref, r.frames_hyp
        ));
    }
    match &a.out {
        Some(p) => fs::write(p, &out)?,
        None => print!("{out}"),
    }

    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mcd = mean(rows.iter().map(|r| r.mcd_db).collect());
    let fpc = mean(rows.iter().filter_map(|r| r.fpc).collect());
    eprintln!(
        "evaluated {} utterances; mean MCD {}; mean FPC {}; unmatched {}",
        rows.len(),
        mcd.map_or("NA".into(), |v| format!("{v:.4} dB")),
        fpc.map_or("NA".into(), |v| format!("{v:.4}")),
        unmatched.len()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn schedule(a: &ScheduleArgs) -> Result<ExitCode> {
    let s = NoiseSchedule::linear(a.steps, a.beta_start, a.beta_end)?;
    print!("{}", s.to_csv());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<ExitCode> {
    let results = gradcheck::run_suite(a.seed)?;
    let mut failed = 0;
    for r in &results {
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {:<28} max_rel_error={:.3e} entries={}", r.name, r.max_rel_error, r.entries);
        failed += usize::from(!r.passed());
    }
    println!("{} checks, {failed} failed (tolerance {:e})", results.len(), gradcheck::TOLERANCE);
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
