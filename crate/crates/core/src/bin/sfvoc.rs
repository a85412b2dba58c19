//! Batch command-line front end: feature extraction, synthesis, desk-scale
//! training, F0-predictor training, and objective evaluation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sfvoc::config::RunConfig;
use sfvoc::container::FeatureFile;
use sfvoc::error::{Error, Result};
use sfvoc::metrics;
use sfvoc::predictor::{train_f0_predictor, F0TrainConfig};
use sfvoc::signal::{extract_f0, mel_spectrogram, read_wav, write_wav, AudioBuffer, F0Track};
use sfvoc::train::{
    load_models, prepare_utterance, utterance_seed, LoadedCheckpoint, TrainState, Utterance,
};

#[derive(Parser)]
#[command(
    name = "sfvoc",
    version,
    about = "Source-filter neural vocoder: extract, synthesize, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract mel-spectrogram and F0 features from a mono 16-bit WAV.
    Extract {
        /// Input WAV file.
        #[arg(long)]
        wav: PathBuf,
        /// Output feature container.
        #[arg(long)]
        out: PathBuf,
        /// Also write the mel matrix as plain text.
        #[arg(long)]
        text: Option<PathBuf>,
        /// Omit the F0 track (produces a mel-only file, as an external
        /// acoustic model would).
        #[arg(long)]
        no_f0: bool,
    },
    /// Synthesize a waveform from a feature file and a checkpoint.
    Synthesize {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Output WAV path.
        #[arg(long)]
        out: PathBuf,
        /// Excitation noise seed (defaults to the checkpoint config seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Treat the features as external mel input: predict F0 with the
        /// checkpoint's predictor even if the file carries an F0 track.
        #[arg(long)]
        external_mel: bool,
        /// Refuse to run if the checkpoint was built from another preset.
        #[arg(long)]
        expect_preset: Option<String>,
        /// Also write the excitation signal as a WAV for inspection.
        #[arg(long)]
        excitation_out: Option<PathBuf>,
    },
    /// Adversarial training on a WAV file or directory of WAVs.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write (and overwrite at periodic saves).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        steps: usize,
        /// Preset name: v1, v2 or toy.
        #[arg(long, default_value = "toy")]
        preset: String,
        /// Config file overriding the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Ablation: disable the excitation noise shaper.
        #[arg(long)]
        no_dnn: bool,
        /// Ablation: subsample the excitation without SubBlock convs.
        #[arg(long)]
        no_subblock: bool,
        /// Ablation: additive excitation fusion with plain residual blocks.
        #[arg(long)]
        no_pc_resblock: bool,
        /// Append per-step loss lines to this file.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Train the F0 predictor section of a checkpoint.
    TrainF0 {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to update (created from --preset when absent).
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "toy")]
        preset: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Objective metrics over paired WAV directories (paired by filename).
    Evaluate {
        #[arg(long)]
        ref_dir: PathBuf,
        #[arg(long)]
        gen_dir: PathBuf,
        /// Write the machine-readable JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for per-utterance evaluation.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Export per-pair mel difference maps (text + PGM) to this dir.
        #[arg(long)]
        diff_map_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Extract {
            wav,
            out,
            text,
            no_f0,
        } => cmd_extract(&wav, &out, text.as_deref(), no_f0),
        Cmd::Synthesize {
            features,
            ckpt,
            out,
            seed,
            external_mel,
            expect_preset,
            excitation_out,
        } => cmd_synthesize(
            &features,
            &ckpt,
            &out,
            seed,
            external_mel,
            expect_preset.as_deref(),
            excitation_out.as_deref(),
        ),
        Cmd::Train {
            data,
            ckpt,
            steps,
            preset,
            config,
            resume,
            seed,
            no_dnn,
            no_subblock,
            no_pc_resblock,
            log,
        } => cmd_train(
            &data,
            &ckpt,
            steps,
            &preset,
            config.as_deref(),
            resume.as_deref(),
            seed,
            (no_dnn, no_subblock, no_pc_resblock),
            log.as_deref(),
        ),
        Cmd::TrainF0 {
            data,
            ckpt,
            preset,
            steps,
            seed,
        } => cmd_train_f0(&data, &ckpt, &preset, steps, seed),
        Cmd::Evaluate {
            ref_dir,
            gen_dir,
            out,
            jobs,
            diff_map_dir,
        } => cmd_evaluate(
            &ref_dir,
            &gen_dir,
            out.as_deref(),
            jobs,
            diff_map_dir.as_deref(),
        ),
    }
}

fn cmd_extract(wav: &Path, out: &Path, text: Option<&Path>, no_f0: bool) -> Result<()> {
    let audio = read_wav(wav)?;
    let mel = mel_spectrogram(&audio)?;
    let f0 = (!no_f0).then(|| extract_f0(&audio));
    if let Some(track) = &f0 {
        debug_assert_eq!(track.len(), mel.frames());
    }
    let file = FeatureFile {
        sample_rate: audio.sample_rate(),
        mel,
        f0,
    };
    file.write(out)?;
    if let Some(text_path) = text {
        file.write_mel_text(text_path)?;
    }
    eprintln!(
        "extracted {} frames ({} Hz) -> {}",
        file.mel.frames(),
        file.sample_rate,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synthesize(
    features: &Path,
    ckpt: &Path,
    out: &Path,
    seed: Option<u64>,
    external_mel: bool,
    expect_preset: Option<&str>,
    excitation_out: Option<&Path>,
) -> Result<()> {
    let LoadedCheckpoint {
        cfg,
        models,
        f0_trained,
    } = load_models(ckpt)?;
    if let Some(expected) = expect_preset {
        if cfg.preset != expected {
            return Err(Error::Config(format!(
                "checkpoint was trained with preset '{}', refusing requested '{expected}'",
                cfg.preset
            )));
        }
    }
    let file = FeatureFile::read(features)?;
    if file.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "feature sample rate {} does not match checkpoint {}",
            file.sample_rate, cfg.sample_rate
        )));
    }
    let f0: F0Track = if external_mel || file.f0.is_none() {
        if !f0_trained {
            return Err(Error::Checkpoint(
                "features carry no F0 track and the checkpoint has no trained F0 predictor \
                 (run train-f0 first)"
                    .into(),
            ));
        }
        models.predictor.predict(&models.store, &file.mel)?
    } else {
        file.f0.clone().unwrap()
    };
    let seed = seed.unwrap_or(cfg.seed);
    let audio = models.synthesize(&file.mel, &f0, seed, cfg.sample_rate)?;
    write_wav(out, &audio)?;
    if let Some(e_path) = excitation_out {
        let exc = models
            .source
            .generate_from_track(&models.store, &f0, seed)?;
        write_wav(e_path, &AudioBuffer::new(exc.e, cfg.sample_rate)?)?;
    }
    eprintln!("synthesized {} samples -> {}", audio.len(), out.display());
    Ok(())
}

fn wav_paths(data: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    if data.is_dir() {
        for entry in std::fs::read_dir(data)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "wav") {
                paths.push(path);
            }
        }
        paths.sort();
    } else {
        paths.push(data.to_path_buf());
    }
    if paths.is_empty() {
        return Err(Error::InvalidArg(format!(
            "no .wav files under {}",
            data.display()
        )));
    }
    Ok(paths)
}

fn load_dataset(data: &Path, state: &TrainState) -> Result<Vec<Utterance>> {
    let paths = wav_paths(data)?;
    let mut utterances = Vec::with_capacity(paths.len());
    for (i, path) in paths.iter().enumerate() {
        let audio = read_wav(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("utt{i}"));
        utterances.push(prepare_utterance(
            name,
            &audio,
            &state.models.source,
            state.cfg.train.segment_len,
            utterance_seed(state.cfg.seed, i),
        )?);
    }
    Ok(utterances)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    ckpt: &Path,
    steps: usize,
    preset: &str,
    config: Option<&Path>,
    resume: Option<&Path>,
    seed: Option<u64>,
    (no_dnn, no_subblock, no_pc_resblock): (bool, bool, bool),
    log: Option<&Path>,
) -> Result<()> {
    let mut state = match resume {
        Some(path) => TrainState::load(path)?,
        None => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::named(preset)?,
            };
            cfg.ablate(no_dnn, no_subblock, no_pc_resblock);
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            TrainState::new(cfg)?
        }
    };

    let dataset = load_dataset(data, &state)?;
    eprintln!(
        "training preset '{}' on {} utterance(s), {} step(s) from step {}",
        state.cfg.preset,
        dataset.len(),
        steps,
        state.step
    );

    let mut log_file = match log {
        Some(path) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)?,
        ),
        None => None,
    };
    let every = state.cfg.train.checkpoint_every;
    for _ in 0..steps {
        let record = state.train_step(&dataset)?;
        eprintln!("{record}");
        if let Some(f) = &mut log_file {
            use std::io::Write;
            writeln!(f, "{record}")?;
        }
        if every > 0 && state.step % every as u64 == 0 {
            state.save(ckpt)?;
        }
    }
    state.save(ckpt)?;
    eprintln!("saved checkpoint -> {}", ckpt.display());
    Ok(())
}

fn cmd_train_f0(
    data: &Path,
    ckpt: &Path,
    preset: &str,
    steps: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut state = if ckpt.exists() {
        TrainState::load(ckpt)?
    } else {
        let mut cfg = RunConfig::named(preset)?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        TrainState::new(cfg)?
    };

    let paths = wav_paths(data)?;
    let mut dataset = Vec::with_capacity(paths.len());
    for path in &paths {
        let audio = read_wav(path)?;
        let mel = mel_spectrogram(&audio)?;
        let f0 = extract_f0(&audio);
        dataset.push((mel, f0));
    }

    let cfg = F0TrainConfig {
        steps: steps.unwrap_or(state.cfg.f0_train.steps),
        seed: seed.unwrap_or(state.cfg.f0_train.seed),
        ..state.cfg.f0_train
    };
    let predictor = state.models.predictor.clone();
    let report = train_f0_predictor(&dataset, &cfg, &mut state.models.store, &predictor)?;
    state.f0_trained = true;
    state.save(ckpt)?;
    eprintln!(
        "f0 predictor: {} steps, best loss {:.4}, train V/UV accuracy {:.2}% -> {}",
        report.steps_run,
        report.best_loss,
        100.0 * report.final_vuv_accuracy,
        ckpt.display()
    );
    Ok(())
}

fn cmd_evaluate(
    ref_dir: &Path,
    gen_dir: &Path,
    out: Option<&Path>,
    jobs: usize,
    diff_map_dir: Option<&Path>,
) -> Result<()> {
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = Vec::new();
    for ref_path in wav_paths(ref_dir)? {
        let name = ref_path.file_name().unwrap().to_string_lossy().into_owned();
        let gen_path = gen_dir.join(&name);
        if gen_path.exists() {
            pairs.push((name, ref_path, gen_path));
        } else {
            eprintln!("warning: no generated file for '{name}', skipped");
        }
    }
    if pairs.is_empty() {
        return Err(Error::Metric("evaluate: no paired files".into()));
    }
    pairs.sort_by(|a, b| a.0.cmp(&b.0));

    let jobs = jobs.max(1).min(pairs.len());
    let chunk = pairs.len().div_ceil(jobs);
    let evals: Vec<metrics::UtteranceEval> =
        std::thread::scope(|scope| -> Result<Vec<metrics::UtteranceEval>> {
            let mut handles = Vec::new();
            for part in pairs.chunks(chunk) {
                handles.push(scope.spawn(move || -> Result<Vec<metrics::UtteranceEval>> {
                    part.iter()
                        .map(|(name, ref_path, gen_path)| {
                            let reference = read_wav(ref_path)?;
                            let generated = read_wav(gen_path)?;
                            metrics::evaluate_pair(name.clone(), &reference, &generated)
                        })
                        .collect()
                }));
            }
            let mut all = Vec::new();
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok(all)
        })?;

    if let Some(dir) = diff_map_dir {
        std::fs::create_dir_all(dir)?;
        for (name, ref_path, gen_path) in &pairs {
            let mel_ref = mel_spectrogram(&read_wav(ref_path)?)?;
            let mel_gen = mel_spectrogram(&read_wav(gen_path)?)?;
            let map = metrics::mel_diff_map(&mel_ref, &mel_gen)?;
            let stem = Path::new(name)
                .file_stem()
                .unwrap()
                .to_string_lossy()
                .into_owned();
            map.write_text(dir.join(format!("{stem}.diff.txt")))?;
            map.write_pgm(dir.join(format!("{stem}.diff.pgm")))?;
        }
    }

    let report = metrics::aggregate_report(evals)?;
    print!("{report}");
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Metric(format!("report serialization: {e}")))?;
        std::fs::write(path, json)?;
    }
    Ok(())
}
