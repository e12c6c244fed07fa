//! Command-line entry points.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure. Every run that produces outputs writes the fully-resolved
//! configuration next to them; wall-clock metadata is confined to a
//! sidecar file so outputs stay byte-reproducible.

use crate::data::{load_png, save_png, to_grayscale, ColorSpace, Frame};
use crate::error::{Error, Result};
use crate::flow::{read_flo, FlowField};
use crate::metrics::evaluate_dirs;
use crate::model::{Generator, PatchDiscriminator};
use crate::synth::generate_dataset;
use crate::train::checkpoint::{save_checkpoint, CheckpointMeta, SaveArgs};
use crate::train::config::RunConfig;
use crate::train::log::TrainLog;
use crate::train::{
    load_checkpoint_file, train_stage1, train_stage2_from, ImageDataset, TrainSink, VideoDataset,
};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "recolor",
    about = "Recurrent video colorization: synthetic data, two-stage training, inference, evaluation",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable key=value override.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Seed override (same as --set seed=N).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Checkpoint to load.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Directory of .flo files.
    #[arg(long)]
    flows: Option<PathBuf>,
    /// Run the recurrence with zero flow when no flow files exist
    /// (degraded mode; logged).
    #[arg(long)]
    zero_flow: bool,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset with exact flows.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Image-colorization pre-training.
    TrainStage1 {
        #[command(flatten)]
        common: Common,
    },
    /// Recurrent video training from a stage-1 (or stage-2) checkpoint.
    TrainStage2 {
        #[command(flatten)]
        common: Common,
    },
    /// Colorize a grayscale frame directory with a checkpoint.
    Colorize {
        /// Input frame directory.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Colorize a single image (image mode).
    ColorizeImage {
        /// Input PNG.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// PSNR/SSIM/warp-error report of a result directory vs ground truth.
    Evaluate {
        /// Directory of result frames.
        results: PathBuf,
        /// Directory of ground-truth frames.
        ground_truth: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Run the CLI; returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version through this path too.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::Config(_) => 1,
                Error::Numeric(_) => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenSynth { common } => gen_synth(&common),
        Cmd::TrainStage1 { common } => cmd_train_stage1(&common),
        Cmd::TrainStage2 { common } => cmd_train_stage2(&common),
        Cmd::Colorize { input, common } => colorize_dir(&input, &common),
        Cmd::ColorizeImage { input, common } => colorize_image(&input, &common),
        Cmd::Evaluate { results, ground_truth, common } => {
            evaluate(&results, &ground_truth, &common)
        }
    }
}

fn resolve_config(common: &Common, default_res: (usize, usize)) -> Result<RunConfig> {
    let mut rc = RunConfig::default_for(default_res);
    if let Some(path) = &common.config {
        rc.apply_file(path)?;
    }
    rc.apply_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        rc.train.seed = seed;
    }
    Ok(rc)
}

fn require_out(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| Error::Usage("--out DIR is required for this command".into()))
}

/// Write the resolved config and the wall-clock sidecar into `out`.
fn write_run_artifacts(out: &Path, rc: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("resolved_config.txt");
    std::fs::write(&cfg_path, rc.to_kv_text()).map_err(|e| Error::io(&cfg_path, e))?;
    let meta_path = out.join("run_meta.txt");
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    std::fs::write(&meta_path, format!("unix_time = {now}\n")).map_err(|e| Error::io(&meta_path, e))
}

fn gen_synth(common: &Common) -> Result<()> {
    let rc = resolve_config(common, (64, 64))?;
    let out = require_out(common)?;
    write_run_artifacts(out, &rc)?;
    let (h, w) = rc.train.resolution;
    generate_dataset(out, rc.synth_clips, h, w, rc.synth_length, rc.train.seed)?;
    println!("wrote {} clips under {}", rc.synth_clips, out.display());
    Ok(())
}

fn data_dir_of(rc: &RunConfig) -> Result<PathBuf> {
    if rc.data_dir.is_empty() {
        return Err(Error::Usage(
            "data_dir is not set (use --set data_dir=PATH or a config file)".into(),
        ));
    }
    Ok(PathBuf::from(&rc.data_dir))
}

fn cmd_train_stage1(common: &Common) -> Result<()> {
    let mut rc = resolve_config(common, (64, 64))?;
    rc.apply("stage", "1")?;
    rc.apply_overrides(&common.set)?; // stage switch resets schedule defaults
    if let Some(seed) = common.seed {
        rc.train.seed = seed;
    }
    rc.validate()?;
    let out = require_out(common)?;
    write_run_artifacts(out, &rc)?;

    let dataset = ImageDataset::from_dir(&data_dir_of(&rc)?)?;
    let mut gen = Generator::new(rc.gen.clone(), rc.train.seed)?;
    let mut sink = TrainSink {
        log: Some(TrainLog::create(&out.join("train_log.csv"))?),
        ckpt_dir: Some(out.to_path_buf()),
        totals: Vec::new(),
    };
    let resume = match &common.checkpoint {
        Some(path) => {
            let ck = load_checkpoint_file(path)?;
            gen = ck.build_generator()?;
            ck.resume_point()
        }
        None => None,
    };
    train_stage1(&mut gen, &dataset, &rc.train, resume, &mut sink)?;
    println!("stage-1 checkpoint: {}", out.join("checkpoint_final.ckpt").display());
    Ok(())
}

fn cmd_train_stage2(common: &Common) -> Result<()> {
    let mut rc = resolve_config(common, (64, 64))?;
    rc.apply("stage", "2")?;
    rc.apply_overrides(&common.set)?;
    if let Some(seed) = common.seed {
        rc.train.seed = seed;
    }
    rc.validate()?;
    let ckpt_path = common.checkpoint.as_deref().ok_or_else(|| {
        Error::Usage("train-stage2 requires --checkpoint (a stage-1 or stage-2 checkpoint)".into())
    })?;
    let out = require_out(common)?;
    write_run_artifacts(out, &rc)?;

    let dataset = VideoDataset::load(&data_dir_of(&rc)?)?;
    let init = load_checkpoint_file(ckpt_path)?;
    let mut sink = TrainSink {
        log: Some(TrainLog::create(&out.join("train_log.csv"))?),
        ckpt_dir: Some(out.to_path_buf()),
        totals: Vec::new(),
    };
    train_stage2_from(&init, &dataset, &rc.train, &rc.disc, &mut sink)?;
    println!("stage-2 checkpoint: {}", out.join("checkpoint_final.ckpt").display());
    Ok(())
}

fn load_generator(common: &Common) -> Result<Generator> {
    let path = common
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::Usage("--checkpoint PATH is required".into()))?;
    load_checkpoint_file(path)?.build_generator()
}

fn gray_input(path: &Path) -> Result<Frame> {
    let f = load_png(path)?;
    match f.color_space() {
        ColorSpace::Grayscale => Ok(f),
        ColorSpace::Rgb => to_grayscale(&f),
    }
}

fn colorize_dir(input: &Path, common: &Common) -> Result<()> {
    let rc = resolve_config(common, (64, 64))?;
    let gen = load_generator(common)?;
    let out = require_out(common)?;
    write_run_artifacts(out, &rc)?;

    let files = crate::data::list_frame_files(input)?;
    let mut frames = Vec::new();
    let mut stems = Vec::new();
    for f in &files {
        frames.push(gray_input(f)?);
        stems.push(f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let clip = crate::data::VideoClip::new(frames)?;

    let flows: Vec<FlowField> = if let Some(flow_dir) = &common.flows {
        let mut flows = Vec::new();
        for t in 1..clip.len() {
            let name = format!("{}_{}.flo", stems[t - 1], stems[t]);
            flows.push(read_flo(&flow_dir.join(&name))?);
        }
        flows
    } else if common.zero_flow {
        log::warn!("running with zero flow (degraded mode): temporal guidance disabled");
        (1..clip.len()).map(|_| FlowField::zeros(clip.height(), clip.width())).collect()
    } else if clip.len() == 1 {
        Vec::new()
    } else {
        return Err(Error::Usage(
            "colorize needs --flows DIR (or --zero-flow for the degraded mode)".into(),
        ));
    };

    let colorized = gen.colorize_clip(&clip, &flows)?;
    for (t, frame) in colorized.frames().iter().enumerate() {
        save_png(frame, &out.join(format!("{}.png", stems[t])))?;
    }
    println!("colorized {} frames into {}", colorized.len(), out.display());
    Ok(())
}

fn colorize_image(input: &Path, common: &Common) -> Result<()> {
    let rc = resolve_config(common, (64, 64))?;
    let gen = load_generator(common)?;
    let out = require_out(common)?;
    write_run_artifacts(out, &rc)?;
    let x = gray_input(input)?;
    let y = gen.forward_first(&x)?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    save_png(&y, &out.join(format!("{stem}.png")))?;
    println!("colorized image written to {}", out.join(format!("{stem}.png")).display());
    Ok(())
}

fn evaluate(results: &Path, ground_truth: &Path, common: &Common) -> Result<()> {
    let rc = resolve_config(common, (64, 64))?;
    let flow_dir = common
        .flows
        .as_deref()
        .ok_or_else(|| Error::Usage("evaluate requires --flows DIR".into()))?;
    let report = evaluate_dirs(results, ground_truth, flow_dir, rc.train.mask_threshold)?;
    print!("{report}");
    if let Some(out) = &common.out {
        write_run_artifacts(out, &rc)?;
        let path = out.join("report.csv");
        std::fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Helper shared by tests and the ablation binary: write a fresh
/// checkpoint from bare models (no optimizer state).
pub fn write_model_checkpoint(
    path: &Path,
    stage: u8,
    gen: &Generator,
    disc: Option<&PatchDiscriminator>,
) -> Result<()> {
    save_checkpoint(
        path,
        &SaveArgs {
            meta: CheckpointMeta { stage, global_step: 0, rng_seed: 0, rng_word_pos: 0 },
            train_cfg_text: "",
            gen_cfg: gen.config(),
            gen_store: gen.store(),
            disc: disc.map(|d| (d.config(), d.store())),
            adam_g: None,
            adam_d: None,
        },
    )
}
