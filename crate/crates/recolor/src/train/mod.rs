//! Two-stage training: stage 1 optimizes the generator as an image
//! colorizer; stage 2 trains the full recurrent GAN with temporal losses,
//! alternating one critic update and one generator update per iteration.
//!
//! Both stages sample uniformly at random (with replacement) per step from
//! a seeded stream, so a run is bit-reproducible from its seed and can be
//! resumed mid-stream from a checkpoint (the RNG word position is saved).

pub mod checkpoint;
pub mod config;
pub mod log;
pub mod optim;

use crate::autodiff::{Arr, Tape, Var};
use crate::data::{to_grayscale, ColorSpace, Frame, VideoClip};
use crate::error::{Error, Result};
use crate::flow::{compose, nonocclusion_mask, warp, FlowField, OcclusionMask};
use crate::losses::{
    self, dense_long_term_loss, l1_loss, long_term_loss_first_anchor, perceptual_loss,
    short_term_loss, stage1_objective, stage2_objective, PairMap, Stage2Components,
};
use crate::model::{frame_to_var, Generator, PatchDiscriminator, PerceptualNet};
use crate::synth::SynthClip;
use checkpoint::{
    load_checkpoint, save_checkpoint, AdamState, Checkpoint, CheckpointMeta, SaveArgs,
};
use config::{RunConfig, TrainConfig};
use log::{LogRow, TrainLog};
use ndarray::IxDyn;
use optim::Adam;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

/// In-memory (grayscale input, color target) pairs for stage 1.
pub struct ImageDataset {
    items: Vec<(Frame, Frame)>,
}

impl ImageDataset {
    pub fn from_rgb_frames(frames: impl IntoIterator<Item = Frame>) -> Result<Self> {
        let mut items = Vec::new();
        for f in frames {
            let rgb = match f.color_space() {
                ColorSpace::Rgb => f,
                ColorSpace::Grayscale => crate::data::replicate_channels(&f)?,
            };
            items.push((to_grayscale(&rgb)?, rgb));
        }
        if items.is_empty() {
            return Err(Error::Data("image dataset is empty".into()));
        }
        Ok(ImageDataset { items })
    }

    /// Load either a flat PNG directory or a directory of clip
    /// subdirectories; every frame becomes one sample.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut frames = Vec::new();
        if crate::data::list_frame_files(dir).is_ok() {
            let (clip, _) = crate::data::load_frame_dir(dir)?;
            frames.extend(clip.into_frames());
        } else {
            for sub in sorted_subdirs(dir)? {
                let (clip, _) = crate::data::load_frame_dir(&sub)?;
                frames.extend(clip.into_frames());
            }
        }
        Self::from_rgb_frames(frames)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item(&self, i: usize) -> &(Frame, Frame) {
        &self.items[i]
    }
}

/// One training video: color frames, derived grayscale inputs, and the
/// teacher flows between adjacent frames.
pub struct VideoItem {
    pub name: String,
    pub color: VideoClip,
    pub gray: VideoClip,
    pub adj_flows: Vec<FlowField>,
}

pub struct VideoDataset {
    pub videos: Vec<VideoItem>,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut subs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    if subs.is_empty() {
        return Err(Error::Data(format!("no clip subdirectories in {}", dir.display())));
    }
    Ok(subs)
}

impl VideoDataset {
    /// Load a dataset directory of clip subdirectories; adjacent `.flo`
    /// teacher flows are mandatory.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut videos = Vec::new();
        for sub in sorted_subdirs(dir)? {
            let (clip, flows) = crate::synth::import_clip(&sub)?;
            if clip.color_space() != ColorSpace::Rgb {
                return Err(Error::Data(format!(
                    "{}: training clips must be color",
                    sub.display()
                )));
            }
            if flows.len() + 1 != clip.len() {
                return Err(Error::Data(format!(
                    "{}: missing teacher flows ({} frames, {} flows)",
                    sub.display(),
                    clip.len(),
                    flows.len()
                )));
            }
            videos.push(VideoItem {
                name: sub.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                gray: clip.to_grayscale()?,
                color: clip,
                adj_flows: flows,
            });
        }
        Ok(VideoDataset { videos })
    }

    /// Wrap synthetic clips (adjacent flows taken from the exact pairs).
    pub fn from_synth(clips: &[SynthClip]) -> Result<Self> {
        let mut videos = Vec::new();
        for (i, sc) in clips.iter().enumerate() {
            videos.push(VideoItem {
                name: format!("clip_{i:04}"),
                gray: sc.clip.to_grayscale()?,
                color: sc.clip.clone(),
                adj_flows: sc.adjacent_flows(),
            });
        }
        if videos.is_empty() {
            return Err(Error::Data("video dataset is empty".into()));
        }
        Ok(VideoDataset { videos })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Window sampling
// ---------------------------------------------------------------------------

/// One training window: frames, teacher flows, and precomputed soft masks
/// (from ground-truth color frames, constants w.r.t. the generator).
pub struct ClipSample {
    pub start: usize,
    pub gray: Vec<Frame>,
    pub color: Vec<Frame>,
    pub adj_flows: Vec<FlowField>,
    pub adj_masks: Vec<OcclusionMask>,
    /// Remote pairs (gap >= 2) with composed flows and soft masks.
    pub pairs: PairMap,
}

/// Uniformly sample a window of `t_len` consecutive frames.
pub fn sample_window(
    video: &VideoItem,
    t_len: usize,
    mask_alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ClipSample> {
    let n = video.color.len();
    if n < t_len {
        return Err(Error::InvalidArgument(format!(
            "video {} has {} frames, window needs {t_len}",
            video.name, n
        )));
    }
    let start = rng.gen_range(0..=n - t_len);
    build_window(video, start, t_len, mask_alpha)
}

/// Deterministic window construction at a given start index.
pub fn build_window(
    video: &VideoItem,
    start: usize,
    t_len: usize,
    mask_alpha: f64,
) -> Result<ClipSample> {
    let gray: Vec<Frame> = video.gray.frames()[start..start + t_len].to_vec();
    let color: Vec<Frame> = video.color.frames()[start..start + t_len].to_vec();
    let adj_flows: Vec<FlowField> = video.adj_flows[start..start + t_len - 1].to_vec();

    let mut adj_masks = Vec::with_capacity(t_len - 1);
    for t in 1..t_len {
        let warped = warp(&color[t - 1], &adj_flows[t - 1])?;
        adj_masks.push(nonocclusion_mask(&color[t], &warped, mask_alpha)?);
    }

    // flow(m, t) composed left-to-right from adjacent flows.
    let mut pairs = PairMap::new();
    for m in 0..t_len.saturating_sub(2) {
        let mut acc = adj_flows[m].clone();
        for t in m + 1..t_len {
            if t > m + 1 {
                acc = compose(&acc, &adj_flows[t - 1])?;
            }
            if t >= m + 2 {
                let warped = warp(&color[m], &acc)?;
                let mask = nonocclusion_mask(&color[t], &warped, mask_alpha)?;
                pairs.insert((m, t), (acc.clone(), mask));
            }
        }
    }
    Ok(ClipSample { start, gray, color, adj_flows, adj_masks, pairs })
}

// ---------------------------------------------------------------------------
// Training sinks (logging + periodic checkpoints + in-memory traces)
// ---------------------------------------------------------------------------

/// Where training writes its byproducts. All fields optional; loss totals
/// are always retained in memory for tests and harnesses.
#[derive(Default)]
pub struct TrainSink {
    pub log: Option<TrainLog>,
    pub ckpt_dir: Option<PathBuf>,
    /// Per-step generator objective values.
    pub totals: Vec<f64>,
}

impl TrainSink {
    pub fn in_memory() -> Self {
        TrainSink::default()
    }

    fn record(&mut self, row: &LogRow) -> Result<()> {
        self.totals.push(row.total);
        if let Some(log) = &mut self.log {
            log.write(row)?;
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.flush()?;
        }
        Ok(())
    }
}

/// Mid-run position extracted from a checkpoint for seamless resume.
pub struct ResumePoint {
    pub global_step: u64,
    pub rng_word_pos: u128,
    pub adam_g: AdamState,
    pub adam_d: Option<AdamState>,
}

impl Checkpoint {
    pub fn resume_point(&self) -> Option<ResumePoint> {
        let adam_g = self.adam_g.clone()?;
        Some(ResumePoint {
            global_step: self.meta.global_step,
            rng_word_pos: self.meta.rng_word_pos,
            adam_g,
            adam_d: self.adam_d.clone(),
        })
    }
}

fn stack_frames(tape: &mut Tape, frames: &[Frame]) -> Var {
    let vars: Vec<Var> = frames.iter().map(|f| frame_to_var(tape, f)).collect();
    tape.concat_axis(0, &vars)
}

fn zero_scalar(tape: &mut Tape) -> Var {
    tape.constant(Arr::zeros(IxDyn(&[])))
}

fn ensure_finite(value: f64, step: u64, what: &str) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::Numeric(format!("{what} became non-finite at step {step}")));
    }
    Ok(())
}

fn maybe_checkpoint(
    sink: &TrainSink,
    cfg: &TrainConfig,
    run_cfg_text: &str,
    gen: &Generator,
    disc: Option<&PatchDiscriminator>,
    adam_g: &Adam,
    adam_d: Option<&Adam>,
    rng: &ChaCha8Rng,
    step_done: u64,
    total_steps: u64,
) -> Result<Option<PathBuf>> {
    let Some(dir) = &sink.ckpt_dir else { return Ok(None) };
    let periodic = cfg.checkpoint_every > 0 && step_done % cfg.checkpoint_every as u64 == 0;
    let last = step_done == total_steps;
    if !periodic && !last {
        return Ok(None);
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = if last { "checkpoint_final.ckpt".to_string() } else { format!("checkpoint_step{step_done:06}.ckpt") };
    let path = dir.join(name);
    save_checkpoint(
        &path,
        &SaveArgs {
            meta: CheckpointMeta {
                stage: cfg.stage,
                global_step: step_done,
                rng_seed: cfg.seed,
                rng_word_pos: rng.get_word_pos(),
            },
            train_cfg_text: run_cfg_text,
            gen_cfg: gen.config(),
            gen_store: gen.store(),
            disc: disc.map(|d| (d.config(), d.store())),
            adam_g: Some(adam_g),
            adam_d,
        },
    )?;
    Ok(Some(path))
}

// ---------------------------------------------------------------------------
// Stage 1
// ---------------------------------------------------------------------------

/// Train the generator in image mode (the placeholder extractor sees the
/// grayscale input itself). Returns the final checkpoint.
pub fn train_stage1(
    gen: &mut Generator,
    dataset: &ImageDataset,
    cfg: &TrainConfig,
    resume: Option<ResumePoint>,
    sink: &mut TrainSink,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if cfg.stage != 1 {
        return Err(Error::Config("train_stage1 needs stage = 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Data("stage 1: empty dataset".into()));
    }
    let n = dataset.len();
    let steps_per_epoch = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        n.div_ceil(cfg.batch_size)
    };
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;

    let percep = PerceptualNet::new(cfg.perceptual_seed);
    let mut adam = Adam::new(gen.store(), cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut start_step = 0u64;
    if let Some(rp) = resume {
        adam.restore(rp.adam_g.t, rp.adam_g.m, rp.adam_g.v);
        rng.set_word_pos(rp.rng_word_pos);
        start_step = rp.global_step;
    }
    let run_cfg_text = cfg_echo(cfg, gen);

    for step in start_step..total_steps {
        let epoch = (step / steps_per_epoch as u64) as usize + 1;
        let lr = cfg.lr_schedule.lr(cfg.lr_g, epoch);

        let batch: Vec<usize> = (0..cfg.batch_size).map(|_| rng.gen_range(0..n)).collect();
        let grays: Vec<Frame> = batch.iter().map(|&i| dataset.item(i).0.clone()).collect();
        let colors: Vec<Frame> = batch.iter().map(|&i| dataset.item(i).1.clone()).collect();

        let mut tape = Tape::new();
        let gb = gen.bind(&mut tape, true);
        let pb = percep.bind(&mut tape);
        let x = stack_frames(&mut tape, &grays);
        let z = stack_frames(&mut tape, &colors);
        let out = gen.forward_batch(&mut tape, &gb, x, x);
        let l1 = l1_loss(&mut tape, out, z)?;
        let lp = perceptual_loss(&mut tape, &percep, &pb, out, z)?;
        let total = stage1_objective(&mut tape, l1, lp, &cfg.weights)?;
        let total_v = tape.scalar_value(total);
        ensure_finite(total_v, step, "stage-1 objective")?;
        let grads = tape.backward(total);
        adam.step(gen.store_mut(), &gb, &grads, lr);

        let row = LogRow {
            step: step + 1,
            lr,
            l1: tape.scalar_value(l1),
            lp: tape.scalar_value(lp),
            total: total_v,
            ..Default::default()
        };
        sink.record(&row)?;
        if (step + 1) % cfg.log_every.max(1) as u64 == 0 {
            ::log::info!("stage1 step {}/{total_steps} total {total_v:.5}", step + 1);
        }
        maybe_checkpoint(sink, cfg, &run_cfg_text, gen, None, &adam, None, &rng, step + 1, total_steps)?;
    }
    sink.finish()?;

    Ok(Checkpoint {
        meta: CheckpointMeta {
            stage: 1,
            global_step: total_steps,
            rng_seed: cfg.seed,
            rng_word_pos: rng.get_word_pos(),
        },
        train_cfg_text: run_cfg_text,
        gen_cfg: gen.config().clone(),
        gen_params: checkpoint::snapshot_store(gen.store()),
        disc: None,
        adam_g: Some(checkpoint::adam_state(&adam)),
        adam_d: None,
    })
}

fn cfg_echo(cfg: &TrainConfig, gen: &Generator) -> String {
    let mut rc = RunConfig::default_for(cfg.resolution);
    rc.train = cfg.clone();
    rc.gen = gen.config().clone();
    rc.to_kv_text()
}

// ---------------------------------------------------------------------------
// Stage 2
// ---------------------------------------------------------------------------

/// One sliding-window iteration: a critic update on detached outputs,
/// then a generator update through the full recurrent graph.
#[allow(clippy::too_many_arguments)]
fn stage2_step(
    gen: &mut Generator,
    disc: &mut PatchDiscriminator,
    percep: &PerceptualNet,
    sample: &ClipSample,
    cfg: &TrainConfig,
    adam_g: &mut Adam,
    adam_d: &mut Adam,
    lr_g: f64,
    lr_d: f64,
    step: u64,
) -> Result<LogRow> {
    let t_len = sample.gray.len();
    let use_gan = cfg.weights.lambda_g > 0.0;
    let reduction = cfg.reduction();

    // Critic update on detached generator outputs.
    let mut ld_value = 0.0;
    if use_gan {
        let mut eval_tape = Tape::no_grad();
        let gb = gen.bind(&mut eval_tape, false);
        let xs: Vec<Var> = sample.gray.iter().map(|f| frame_to_var(&mut eval_tape, f)).collect();
        let fwd = gen.colorize_clip_vars(&mut eval_tape, &gb, &xs, &sample.adj_flows)?;
        let fakes: Vec<Frame> = fwd
            .outputs
            .iter()
            .map(|&v| crate::model::var_to_frame(&eval_tape, v))
            .collect::<Result<Vec<_>>>()?;

        disc.update_power_iteration();
        let mut tape = Tape::new();
        let db = disc.bind(&mut tape, true);
        let fake = stack_frames(&mut tape, &fakes);
        let real = stack_frames(&mut tape, &sample.color);
        let both = tape.concat_axis(0, &[fake, real]);
        let scores = disc.forward_batch(&mut tape, &db, both);
        let fake_scores = tape.narrow(scores, 0, 0, t_len);
        let real_scores = tape.narrow(scores, 0, t_len, t_len);
        let ld = losses::wgan_d_loss(&mut tape, fake_scores, real_scores)?;
        ld_value = tape.scalar_value(ld);
        ensure_finite(ld_value, step, "critic loss")?;
        let grads = tape.backward(ld);
        adam_d.step(disc.store_mut(), &db, &grads, lr_d);
    }

    // Generator update through the recurrence.
    let mut tape = Tape::new();
    let gb = gen.bind(&mut tape, true);
    let pb = percep.bind(&mut tape);
    let xs: Vec<Var> = sample.gray.iter().map(|f| frame_to_var(&mut tape, f)).collect();
    let fwd = gen.colorize_clip_vars(&mut tape, &gb, &xs, &sample.adj_flows)?;
    let s_all = tape.concat_axis(0, &fwd.outputs);
    let z_all = stack_frames(&mut tape, &sample.color);

    let l1 = l1_loss(&mut tape, s_all, z_all)?;
    let lp = perceptual_loss(&mut tape, percep, &pb, s_all, z_all)?;
    let lg = if use_gan {
        let db = disc.bind(&mut tape, false);
        let scores = disc.forward_batch(&mut tape, &db, s_all);
        losses::wgan_g_loss(&mut tape, scores)?
    } else {
        zero_scalar(&mut tape)
    };
    let lst = if cfg.weights.lambda_st > 0.0 {
        short_term_loss(&mut tape, &fwd.outputs, &sample.adj_flows, &sample.adj_masks, reduction)?
            .value
    } else {
        zero_scalar(&mut tape)
    };
    let ldlt = if cfg.weights.lambda_dlt > 0.0 {
        dense_long_term_loss(&mut tape, &fwd.outputs, &sample.pairs, reduction)?.value
    } else {
        zero_scalar(&mut tape)
    };
    let llt = if cfg.weights.lambda_lt > 0.0 {
        Some(long_term_loss_first_anchor(&mut tape, &fwd.outputs, &sample.pairs, reduction)?.value)
    } else {
        None
    };
    let comps = Stage2Components { l1, lp, lg, lst, ldlt, llt };
    let breakdown = stage2_objective(&mut tape, &comps, &cfg.weights)?;
    let total_v = tape.scalar_value(breakdown.total);
    ensure_finite(total_v, step, "stage-2 objective")?;
    let grads = tape.backward(breakdown.total);
    adam_g.step(gen.store_mut(), &gb, &grads, lr_g);

    Ok(LogRow {
        step: step + 1,
        lr: lr_g,
        l1: tape.scalar_value(l1),
        lp: tape.scalar_value(lp),
        lg: tape.scalar_value(lg),
        lst: tape.scalar_value(lst),
        ldlt: tape.scalar_value(ldlt),
        llt: llt.map(|v| tape.scalar_value(v)).unwrap_or(0.0),
        ld: ld_value,
        total: total_v,
    })
}

/// Train the recurrent model on sliding windows of `cfg.window_t` frames.
/// Videos shorter than the window are skipped with a warning.
pub fn train_stage2(
    gen: &mut Generator,
    disc: &mut PatchDiscriminator,
    dataset: &VideoDataset,
    cfg: &TrainConfig,
    resume: Option<ResumePoint>,
    sink: &mut TrainSink,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if cfg.stage != 2 {
        return Err(Error::Config("train_stage2 needs stage = 2".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Data("stage 2: empty dataset".into()));
    }
    if !dataset.videos.iter().any(|v| v.color.len() >= cfg.window_t) {
        return Err(Error::Data(format!(
            "no video is long enough for window_t = {}",
            cfg.window_t
        )));
    }
    let n = dataset.len();
    let steps_per_epoch = if cfg.steps_per_epoch > 0 { cfg.steps_per_epoch } else { n.max(1) };
    let total_steps = (cfg.epochs * steps_per_epoch) as u64;

    let percep = PerceptualNet::new(cfg.perceptual_seed);
    let mut adam_g = Adam::new(gen.store(), cfg.adam_beta1, cfg.adam_beta2);
    let mut adam_d = Adam::new(disc.store(), cfg.adam_beta1, cfg.adam_beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut start_step = 0u64;
    if let Some(rp) = resume {
        adam_g.restore(rp.adam_g.t, rp.adam_g.m, rp.adam_g.v);
        if let Some(ad) = rp.adam_d {
            adam_d.restore(ad.t, ad.m, ad.v);
        }
        rng.set_word_pos(rp.rng_word_pos);
        start_step = rp.global_step;
    }
    let run_cfg_text = cfg_echo(cfg, gen);

    for step in start_step..total_steps {
        let epoch = (step / steps_per_epoch as u64) as usize + 1;
        let lr_g = cfg.lr_schedule.lr(cfg.lr_g, epoch);
        let lr_d = cfg.lr_schedule.lr(cfg.lr_d, epoch);

        // Uniform video pick; windows come uniformly from within.
        let sample = loop {
            let vi = rng.gen_range(0..n);
            let video = &dataset.videos[vi];
            if video.color.len() < cfg.window_t {
                ::log::warn!(
                    "skipping video {} ({} frames < window {})",
                    video.name,
                    video.color.len(),
                    cfg.window_t
                );
                continue;
            }
            break sample_window(video, cfg.window_t, cfg.mask_alpha, &mut rng)?;
        };

        let row = stage2_step(
            gen, disc, &percep, &sample, cfg, &mut adam_g, &mut adam_d, lr_g, lr_d, step,
        )?;
        sink.record(&row)?;
        if (step + 1) % cfg.log_every.max(1) as u64 == 0 {
            ::log::info!("stage2 step {}/{total_steps} total {:.5}", step + 1, row.total);
        }
        maybe_checkpoint(
            sink,
            cfg,
            &run_cfg_text,
            gen,
            Some(disc),
            &adam_g,
            Some(&adam_d),
            &rng,
            step + 1,
            total_steps,
        )?;
    }
    sink.finish()?;

    Ok(Checkpoint {
        meta: CheckpointMeta {
            stage: 2,
            global_step: total_steps,
            rng_seed: cfg.seed,
            rng_word_pos: rng.get_word_pos(),
        },
        train_cfg_text: run_cfg_text,
        gen_cfg: gen.config().clone(),
        gen_params: checkpoint::snapshot_store(gen.store()),
        disc: Some((disc.config().clone(), checkpoint::snapshot_store(disc.store()))),
        adam_g: Some(checkpoint::adam_state(&adam_g)),
        adam_d: Some(checkpoint::adam_state(&adam_d)),
    })
}

/// Spec-shaped entry: start (or resume) stage 2 from a checkpoint.
///
/// A stage-1 checkpoint seeds the generator weights and starts stage 2
/// fresh; a stage-2 checkpoint resumes mid-run.
pub fn train_stage2_from(
    init: &Checkpoint,
    dataset: &VideoDataset,
    cfg: &TrainConfig,
    disc_cfg: &crate::model::DiscriminatorConfig,
    sink: &mut TrainSink,
) -> Result<(Generator, PatchDiscriminator, Checkpoint)> {
    let mut gen = init.build_generator()?;
    let (mut disc, resume) = if init.meta.stage == 2 {
        let disc = init
            .build_discriminator()?
            .ok_or_else(|| Error::Format("stage-2 checkpoint lacks a discriminator".into()))?;
        (disc, init.resume_point())
    } else {
        (PatchDiscriminator::new(disc_cfg.clone(), cfg.seed ^ 0xd15c)?, None)
    };
    let ck = train_stage2(&mut gen, &mut disc, dataset, cfg, resume, sink)?;
    Ok((gen, disc, ck))
}

/// Convenience for tests and the CLI: load a checkpoint file.
pub fn load_checkpoint_file(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path)
}
