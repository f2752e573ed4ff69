//! `vldn`: listener head-dynamics pipelines: synthetic data generation,
//! predictor and diffusion training, sampling and evaluation.
//!
//! Exit codes: 0 success, 2 usage/config errors, 3 data errors,
//! 4 numeric failures.

mod plot;
mod rundir;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use vldn_core::config::RunConfig;
use vldn_core::data::io::{
    load_manifest, load_manifest_sample, load_motion, load_sample, save_motion,
};
use vldn_core::data::normalize::denormalize_mat;
use vldn_core::data::synth::generate_synthetic_dataset;
use vldn_core::data::{DatasetManifest, IntensityTrack, MotionSequence};
use vldn_core::diffusion::{cosine_schedule, ddim_sample, train_diffusion, LoadedDataset};
use vldn_core::error::Error;
use vldn_core::metrics::{evaluate_suite, ChannelGroup, EvalPair, MetricConfig, RpccMode};
use vldn_core::model::{CondInputs, ListenerModel};
use vldn_core::predictor::{train_predictor, IntensityPredictor};

use rundir::{write_run_json, RunLock};

#[derive(Parser)]
#[command(name = "vldn", version, about = "Listener head-dynamics toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct ConfigArgs {
    /// Built-in profile: "desk" (CI-scale) or "paper" (published constants).
    #[arg(long, default_value = "desk")]
    profile: String,
    /// TOML config file overlaid on the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (VLDN_SEED env takes precedence over the config file).
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = RunConfig::from_profile(&self.profile)?;
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dyadic dataset.
    GenData {
        /// Number of samples.
        #[arg(long)]
        n: usize,
        /// Frames per clip (multiple of 6).
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of samples assigned to the train split.
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        /// Overwrite an occupied output directory.
        #[arg(long)]
        force: bool,
    },
    /// Train the emotional intensity predictor and freeze it.
    TrainPredictor {
        /// Dataset directory (from gen-data).
        #[arg(long)]
        data: PathBuf,
        /// Run directory for checkpoint and logs.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the conditional diffusion model.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Frozen predictor checkpoint (from train-predictor).
        #[arg(long)]
        predictor: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Sample listener motion from a trained checkpoint.
    Sample {
        /// Trained model checkpoint.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory (normalization stats + conditions).
        #[arg(long)]
        data: PathBuf,
        /// Draw conditions from this dataset sample.
        #[arg(long)]
        sample_id: Option<String>,
        /// Override the text description.
        #[arg(long)]
        text: Option<String>,
        /// Constant valence override in [-1, 1].
        #[arg(long)]
        valence: Option<f64>,
        /// Constant arousal override in [-1, 1].
        #[arg(long)]
        arousal: Option<f64>,
        /// Output motion file (.vldm).
        #[arg(long)]
        out: PathBuf,
        /// Optional SVG plot of selected channels.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Channels to plot.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,50")]
        plot_channels: Vec<usize>,
        /// Optional CSV frame table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate generated motions against the test split.
    Eval {
        /// Directory of generated <sample_id>.vldm files.
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        sid_k: usize,
        #[arg(long, default_value_t = 0)]
        sid_seed: u64,
        /// "differenced" (default) or "raw".
        #[arg(long, default_value = "differenced")]
        rpcc_mode: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Summarize a sample, motion, checkpoint, manifest or report file.
    Inspect { path: PathBuf },
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Domain(_) => 2,
        Error::Numeric(_) => 4,
        _ => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            n,
            frames,
            seed,
            out,
            train_fraction,
            force,
        } => cmd_gen_data(n, frames, seed, &out, train_fraction, force),
        Command::TrainPredictor { data, out, config } => cmd_train_predictor(&data, &out, &config),
        Command::Train {
            data,
            predictor,
            out,
            resume,
            config,
        } => cmd_train(&data, &predictor, &out, resume, &config),
        Command::Sample {
            checkpoint,
            data,
            sample_id,
            text,
            valence,
            arousal,
            out,
            plot,
            plot_channels,
            csv,
            config,
        } => cmd_sample(SampleArgs {
            checkpoint,
            data,
            sample_id,
            text,
            valence,
            arousal,
            out,
            plot,
            plot_channels,
            csv,
            config,
        }),
        Command::Eval {
            generated,
            data,
            out,
            sid_k,
            sid_seed,
            rpcc_mode,
            config,
        } => cmd_eval(&generated, &data, &out, sid_k, sid_seed, &rpcc_mode, &config),
        Command::Inspect { path } => cmd_inspect(&path),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn cmd_gen_data(
    n: usize,
    frames: usize,
    seed: u64,
    out: &Path,
    train_fraction: f64,
    force: bool,
) -> Result<(), Error> {
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        if !force {
            return Err(Error::config(format!(
                "output directory {} is not empty (pass --force to overwrite)",
                out.display()
            )));
        }
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let _lock = RunLock::acquire(out)?;

    let manifest = generate_synthetic_dataset(out, n, frames, seed, train_fraction)?;

    // stats summary
    let stats = &manifest.normalization_stats;
    let mut summary = format!(
        "samples: {n}\nframes per clip: {frames}\nseed: {seed}\ntrain: {}\ntest: {}\n\n",
        manifest.split.train.len(),
        manifest.split.test.len()
    );
    summary.push_str("channel,mean,std\n");
    for c in 0..stats.mean.len() {
        summary.push_str(&format!("{c},{:.6},{:.6}\n", stats.mean[c], stats.std[c]));
    }
    std::fs::write(out.join("stats.txt"), summary)
        .map_err(|e| Error::io(out.join("stats.txt").display().to_string(), e))?;

    let mut cfg = RunConfig::desk();
    cfg.seed = seed;
    cfg.data.n_samples = n;
    cfg.data.frames = frames;
    cfg.data.train_fraction = train_fraction;
    write_run_json(
        &out.join("run.json"),
        "gen-data",
        &cfg,
        &[("manifest", out.join("manifest.json").as_path())],
    )?;

    println!(
        "wrote {n} samples ({} train / {} test) to {}",
        manifest.split.train.len(),
        manifest.split.test.len(),
        out.display()
    );
    Ok(())
}

fn load_dataset_splits(
    data: &Path,
    d_text: usize,
) -> Result<(DatasetManifest, LoadedDataset, LoadedDataset), Error> {
    let manifest_path = data.join("manifest.json");
    let manifest = load_manifest(&manifest_path)?;
    let encoder = vldn_core::text::ToyTextEncoder::new(d_text);
    let train = LoadedDataset::load(data, &manifest, &manifest.split.train, &encoder)?;
    let test = LoadedDataset::load(data, &manifest, &manifest.split.test, &encoder)?;
    Ok((manifest, train, test))
}

fn cmd_train_predictor(data: &Path, out: &Path, config: &ConfigArgs) -> Result<(), Error> {
    let cfg = config.resolve()?;
    let _lock = RunLock::acquire(out)?;
    let (_, train, test) = load_dataset_splits(data, cfg.model.d_text)?;

    println!(
        "training intensity predictor: profile={} seed={} hidden={} epochs={} lr={:e}",
        cfg.profile,
        cfg.seed,
        cfg.train.predictor_hidden,
        cfg.train.predictor_epochs,
        cfg.train.predictor_lr
    );
    let outcome = train_predictor(
        &train.predictor_pairs(),
        &test.predictor_pairs(),
        cfg.predictor_config(),
        &cfg.predictor_train_config(),
    )?;

    let ckpt = out.join("predictor.ckpt");
    outcome
        .predictor
        .save(&ckpt, cfg.train.predictor_epochs as u64)?;

    let mut csv = String::from("epoch,mse\n");
    for (i, loss) in outcome.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{:.8}\n", i + 1, loss));
    }
    std::fs::write(out.join("predictor_loss.csv"), csv)
        .map_err(|e| Error::io(out.display().to_string(), e))?;

    write_run_json(
        &out.join("run.json"),
        "train-predictor",
        &cfg,
        &[("manifest", data.join("manifest.json").as_path())],
    )?;
    println!(
        "predictor held-out VA MSE: {:.4} -> {}",
        outcome.holdout_mse,
        ckpt.display()
    );
    Ok(())
}

fn cmd_train(
    data: &Path,
    predictor_path: &Path,
    out: &Path,
    resume: bool,
    config: &ConfigArgs,
) -> Result<(), Error> {
    let cfg = config.resolve()?;
    if !predictor_path.exists() {
        return Err(Error::MissingFile(format!(
            "--predictor {}: checkpoint not found (run `vldn train-predictor` first)",
            predictor_path.display()
        )));
    }
    let _lock = RunLock::acquire(out)?;
    let predictor = IntensityPredictor::<f32>::load_frozen(predictor_path)?;
    let (_, train, _) = load_dataset_splits(data, cfg.model.d_text)?;

    let ckpt_path = out.join("model.ckpt");
    let (mut model, start_epoch) = if resume {
        let (model, header) = ListenerModel::<f32>::load(&ckpt_path)?;
        println!("resuming from epoch {}", header.epoch);
        (model, header.epoch)
    } else {
        (ListenerModel::<f32>::new(cfg.model_config(), cfg.seed)?, 0)
    };
    if model.cfg.frames != cfg.data.frames {
        return Err(Error::config(format!(
            "model frames {} do not match data.frames {}",
            model.cfg.frames, cfg.data.frames
        )));
    }

    let schedule = cosine_schedule(cfg.diffusion.t_steps, cfg.diffusion.cosine_s)?;
    println!(
        "run header: profile={} seed={} t_steps={} ddim_steps={} batch_size={} lr={:e} epochs={} \
         lambda_simple={} lambda_emotional={} lambda_vel={}",
        cfg.profile,
        cfg.seed,
        cfg.diffusion.t_steps,
        cfg.diffusion.ddim_steps,
        cfg.train.batch_size,
        cfg.train.lr,
        cfg.train.epochs,
        cfg.train.lambda_simple,
        cfg.train.lambda_emotional,
        cfg.train.lambda_vel
    );

    let remaining = cfg.train.epochs.saturating_sub(start_epoch as usize);
    if remaining == 0 {
        println!("nothing to do: checkpoint already at epoch {start_epoch}");
        return Ok(());
    }
    let mut train_cfg = cfg.train_config();
    train_cfg.epochs = remaining;
    let outcome = train_diffusion(
        &mut model,
        &predictor,
        &train,
        &schedule,
        &train_cfg,
        out,
        start_epoch,
    )?;

    write_run_json(
        &out.join("run.json"),
        "train",
        &cfg,
        &[
            ("manifest", data.join("manifest.json").as_path()),
            ("predictor", predictor_path),
        ],
    )?;
    let last = outcome.epoch_losses.last().expect("at least one epoch");
    println!(
        "training done: {} epochs, final total loss {:.5} -> {}",
        outcome.epoch_losses.len(),
        last.total,
        outcome.final_checkpoint.display()
    );
    Ok(())
}

struct SampleArgs {
    checkpoint: PathBuf,
    data: PathBuf,
    sample_id: Option<String>,
    text: Option<String>,
    valence: Option<f64>,
    arousal: Option<f64>,
    out: PathBuf,
    plot: Option<PathBuf>,
    plot_channels: Vec<usize>,
    csv: Option<PathBuf>,
    config: ConfigArgs,
}

fn cmd_sample(args: SampleArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    for (name, v) in [("--valence", args.valence), ("--arousal", args.arousal)] {
        if let Some(v) = v {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} {v} outside [-1, 1]")));
            }
        }
    }
    let (model, _) = ListenerModel::<f32>::load(&args.checkpoint)?;
    let manifest = load_manifest(&args.data.join("manifest.json"))?;
    let stats = manifest.normalization_stats.clone();

    // conditions: dataset sample, or a synthetic speaker for ad-hoc prompts
    let mut sample = match &args.sample_id {
        Some(id) => {
            let entry = manifest
                .entry(id)
                .ok_or_else(|| Error::MissingFile(format!("sample `{id}` not found in manifest")))?;
            load_manifest_sample(&args.data, &entry.path)?
        }
        None => vldn_core::data::synth::synthesize_sample(cfg.seed, 0, model.cfg.frames, None)?,
    };
    if sample.frames() != model.cfg.frames {
        return Err(Error::shape(format!(
            "sample has {} frames but the checkpoint was trained for {}",
            sample.frames(),
            model.cfg.frames
        )));
    }
    if let Some(text) = &args.text {
        sample.text = vldn_core::data::TextAnnotation::new(text.clone(), None)?;
    }
    if args.valence.is_some() || args.arousal.is_some() {
        let mut va = sample.tags.va.clone();
        if let Some(v) = args.valence {
            va.column_mut(0).fill(v as f32);
        }
        if let Some(a) = args.arousal {
            va.column_mut(1).fill(a as f32);
        }
        sample.tags = IntensityTrack::new(va)?;
    }

    let encoder = model.text_encoder();
    let inputs = CondInputs::<f32>::from_sample(&sample, &stats, &encoder)?;
    let (bundle, _) = model.encode_conditions(&inputs)?;
    let schedule = cosine_schedule(cfg.diffusion.t_steps, cfg.diffusion.cosine_s)?;
    let normalized = ddim_sample(
        |h, t| model.denoise(h, &bundle, t, schedule.t_steps),
        &schedule,
        cfg.diffusion.ddim_steps,
        cfg.seed,
        model.cfg.frames,
    )?;
    let raw = denormalize_mat(&normalized, &stats)?;
    let motion = MotionSequence::new(raw)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    }
    save_motion(&args.out, &motion)?;

    if let Some(plot_path) = &args.plot {
        plot::write_motion_svg(plot_path, &motion, &args.plot_channels)?;
    }
    if let Some(csv_path) = &args.csv {
        plot::write_motion_csv(csv_path, &motion)?;
    }
    let run_json = args.out.with_extension("run.json");
    write_run_json(
        &run_json,
        "sample",
        &cfg,
        &[
            ("checkpoint", args.checkpoint.as_path()),
            ("manifest", args.data.join("manifest.json").as_path()),
        ],
    )?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_eval(
    generated: &Path,
    data: &Path,
    out: &Path,
    sid_k: usize,
    sid_seed: u64,
    rpcc_mode: &str,
    _config: &ConfigArgs,
) -> Result<(), Error> {
    let rpcc_mode = match rpcc_mode {
        "differenced" => RpccMode::Differenced,
        "raw" => RpccMode::Raw,
        other => {
            return Err(Error::config(format!(
                "--rpcc-mode must be \"differenced\" or \"raw\", got {other}"
            )))
        }
    };
    let manifest = load_manifest(&data.join("manifest.json"))?;
    let test_ids = &manifest.split.test;
    if test_ids.is_empty() {
        return Err(Error::Domain("manifest has no test split".into()));
    }

    let mut missing = Vec::new();
    let mut pairs = Vec::new();
    for id in test_ids {
        let gen_path = generated.join(format!("{id}.vldm"));
        if !gen_path.exists() {
            missing.push(id.clone());
            continue;
        }
        let gen_motion = load_motion(&gen_path)?;
        let entry = manifest
            .entry(id)
            .ok_or_else(|| Error::MissingFile(format!("sample `{id}` not in manifest")))?;
        let gt = load_manifest_sample(data, &entry.path)?;
        pairs.push(EvalPair {
            sample_id: id.clone(),
            generated: gen_motion.frames.mapv(|v| v as f64),
            gt_listener: gt.listener_motion.frames.mapv(|v| v as f64),
            speaker: gt.speaker_motion.frames.mapv(|v| v as f64),
        });
    }
    if !missing.is_empty() {
        return Err(Error::MissingFile(format!(
            "generated motions missing for {} test samples: {}",
            missing.len(),
            missing.join(", ")
        )));
    }

    let config = MetricConfig {
        sid_k,
        sid_seed,
        rpcc_mode,
    };
    let report = evaluate_suite(&pairs, &config)?;

    println!("{:<8}{:>14}{:>14}", "metric", "exp", "pose");
    for metric in vldn_core::metrics::METRIC_NAMES {
        let exp = report.get(metric, ChannelGroup::Exp).unwrap_or(f64::NAN);
        let pose = report.get(metric, ChannelGroup::Pose).unwrap_or(f64::NAN);
        println!("{metric:<8}{exp:>14.6}{pose:>14.6}");
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    report.to_json(&out.join("report.json"))?;
    report.to_csv(&out.join("report.csv"))?;
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

fn cmd_inspect(path: &Path) -> Result<(), Error> {
    if !path.exists() {
        return Err(Error::MissingFile(path.display().to_string()));
    }
    let mut magic = [0u8; 4];
    {
        use std::io::Read;
        let mut f =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let _ = f.read(&mut magic);
    }
    match &magic {
        b"VLDX" => {
            let sample = load_sample(path)?;
            println!("dyad sample `{}`", sample.sample_id);
            println!(
                "  frames: {} ({:.1} s at 30 fps)",
                sample.frames(),
                sample.frames() as f64 / 30.0
            );
            println!(
                "  mel: {} bins x {} frames",
                128,
                sample.speaker_audio.audio_frames()
            );
            println!("  tags: {} at 5 Hz", sample.tags.n_tags());
            println!(
                "  text: {:?} (template {:?})",
                sample.text.description, sample.text.template_id
            );
        }
        b"VLDM" => {
            let motion = load_motion(path)?;
            println!(
                "motion file: {} frames x {} channels",
                motion.len(),
                motion.frames.ncols()
            );
        }
        b"VLCK" => {
            let (header, tensors) = vldn_core::nn::checkpoint::read_checkpoint(path)?;
            let scalars: usize = tensors.iter().map(|(_, t)| t.len()).sum();
            println!(
                "checkpoint kind={} epoch={} frozen={}",
                header.kind, header.epoch, header.frozen
            );
            println!("  config: {}", header.config);
            println!("  tensors: {} ({} scalars)", tensors.len(), scalars);
        }
        _ => {
            // JSON artifacts: manifest or metric report
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            if let Ok(manifest) = serde_json::from_str::<DatasetManifest>(&text) {
                println!(
                    "dataset manifest: {} samples ({} train / {} test)",
                    manifest.samples.len(),
                    manifest.split.train.len(),
                    manifest.split.test.len()
                );
            } else if let Ok(report) =
                serde_json::from_str::<vldn_core::metrics::MetricReport>(&text)
            {
                println!(
                    "metric report: {} cells over {} sequences",
                    report.cells.len(),
                    report.n_sequences
                );
            } else {
                return Err(Error::Malformed {
                    path: path.display().to_string(),
                    detail: "unrecognized file type".into(),
                });
            }
        }
    }
    Ok(())
}
