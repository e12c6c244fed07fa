//! Named ablation settings and the comparison harness.
//!
//! Each setting toggles loss terms, feature extractors, or the training
//! scheme against the full model, and maps to one runnable configuration.
//! The harness trains every requested setting with the same seed and step
//! budget on a synthetic dataset, then scores held-out clips.

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{psnr, ssim, warp_error, warp_error_pairs};
use crate::model::{DiscriminatorConfig, Generator, GeneratorConfig, PatchDiscriminator};
use crate::synth::{make_clip, random_spec, SynthClip};
use crate::train::{
    config::TrainConfig, train_stage1, train_stage2, ImageDataset, TrainSink, VideoDataset,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Which stages a setting trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainingScheme {
    /// Image-colorization pre-training only.
    Stage1Only,
    /// Pre-training followed by recurrent video training.
    TwoStage,
}

/// One runnable ablation setting.
#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub name: &'static str,
    pub target: &'static str,
    pub weights: LossWeights,
    pub use_gfe: bool,
    pub use_pfe: bool,
    pub scheme: TrainingScheme,
}

fn w(l1: f64, p: f64, g: f64, st: f64, dlt: f64, lt: f64) -> LossWeights {
    LossWeights {
        lambda_1: l1,
        lambda_p: p,
        lambda_g: g,
        lambda_st: st,
        lambda_dlt: dlt,
        lambda_lt: lt,
    }
}

/// The full suite of named settings; every row toggles exactly one aspect
/// against `full`.
pub fn suite() -> Vec<AblationConfig> {
    let base = |name, target, weights| AblationConfig {
        name,
        target,
        weights,
        use_gfe: true,
        use_pfe: true,
        scheme: TrainingScheme::TwoStage,
    };
    vec![
        base("l(1)", "only L1 as a baseline", w(10.0, 0.0, 0.0, 0.0, 0.0, 0.0)),
        base("l(2)", "L1 plus short-term as a baseline", w(10.0, 0.0, 0.0, 3.0, 0.0, 0.0)),
        base("l(3.1)", "without L1", w(0.0, 5.0, 1.0, 3.0, 5.0, 0.0)),
        base("l(3.2)", "without Lp", w(10.0, 0.0, 1.0, 3.0, 5.0, 0.0)),
        base("l(3.3)", "without LG", w(10.0, 5.0, 0.0, 3.0, 5.0, 0.0)),
        base("l(3.4)", "without Lp and LG", w(10.0, 0.0, 0.0, 3.0, 5.0, 0.0)),
        base("l(3.5)", "without L1 and LG", w(0.0, 5.0, 0.0, 3.0, 5.0, 0.0)),
        base("l(3.6)", "without L1 and Lp", w(0.0, 0.0, 1.0, 3.0, 5.0, 0.0)),
        base("l(3.7)", "without L1, Lp, and LG", w(0.0, 0.0, 0.0, 3.0, 5.0, 0.0)),
        base("l(4.1)", "without short-term loss", w(10.0, 5.0, 1.0, 0.0, 5.0, 0.0)),
        base("l(4.2)", "without dense long-term loss", w(10.0, 5.0, 1.0, 3.0, 0.0, 0.0)),
        base("l(4.3)", "without both temporal losses", w(10.0, 5.0, 1.0, 0.0, 0.0, 0.0)),
        base("l(4.4)", "first-anchor long-term instead of dense", w(10.0, 5.0, 1.0, 0.0, 0.0, 5.0)),
        base(
            "l(4.5)",
            "short-term plus first-anchor long-term",
            w(10.0, 5.0, 1.0, 3.0, 0.0, 5.0),
        ),
        AblationConfig { use_gfe: false, ..base("f(1)", "without the global feature extractor", LossWeights::default()) },
        AblationConfig { use_pfe: false, ..base("f(2)", "without the placeholder feature extractor", LossWeights::default()) },
        AblationConfig {
            use_gfe: false,
            use_pfe: false,
            ..base("f(3)", "mainstream only", LossWeights::default())
        },
        AblationConfig {
            scheme: TrainingScheme::Stage1Only,
            ..base("t(1)", "image-stage model only", LossWeights::default())
        },
        // At desk scale the resolution split of the original study collapses;
        // t(2) keeps the two-stage scheme and stands in for the
        // lower-resolution second stage (documented in REPRODUCTION.md).
        base("t(2)", "two-stage model, reduced schedule", LossWeights::default()),
        base("full", "full losses and training stages", LossWeights::default()),
    ]
}

/// Find a setting by name.
pub fn find_config<'a>(suite: &'a [AblationConfig], name: &str) -> Result<&'a AblationConfig> {
    suite
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation config: {name}")))
}

/// Step budget per setting.
#[derive(Clone, Copy, Debug)]
pub struct AblationBudget {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
}

/// Scores of one trained setting on held-out clips.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub warp_error: f64,
    /// Warp error over remote pairs (gap >= remote_gap).
    pub remote_warp_error: f64,
    pub trainable_params: usize,
    pub steps: usize,
}

/// Evaluation material: held-out synthetic clips with exact flows/masks.
pub struct HeldOut {
    pub clips: Vec<SynthClip>,
    pub remote_gap: usize,
}

impl HeldOut {
    /// Seeded held-out clips, long enough to contain remote pairs.
    pub fn generate(n: usize, height: usize, width: usize, length: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clips = Vec::with_capacity(n);
        for i in 0..n {
            let spec = random_spec(height, width, length, &mut rng);
            clips.push(make_clip(&spec, seed.wrapping_add(1000 + i as u64))?);
        }
        Ok(HeldOut { clips, remote_gap: 5 })
    }
}

/// Score a generator on the held-out clips (exact flows and masks).
pub fn evaluate_generator(gen: &Generator, held_out: &HeldOut) -> Result<AblationRow> {
    let mut psnr_acc = 0.0;
    let mut ssim_acc = 0.0;
    let mut we_acc = 0.0;
    let mut remote_acc = 0.0;
    let mut frames = 0usize;
    let mut remote_count = 0usize;
    for sc in &held_out.clips {
        let gray = sc.clip.to_grayscale()?;
        let out = gen.colorize_clip(&gray, &sc.adjacent_flows())?;
        for t in 0..out.len() {
            psnr_acc += psnr(out.frame(t), sc.clip.frame(t))?;
            ssim_acc += ssim(out.frame(t), sc.clip.frame(t))?;
            frames += 1;
        }
        let we = warp_error(&out, &sc.adjacent_flows(), &sc.adjacent_masks())?;
        we_acc += we.value;

        let t_len = sc.len();
        let pairs: Vec<(usize, usize)> = (0..t_len)
            .flat_map(|m| (m + held_out.remote_gap..t_len).map(move |t| (m, t)))
            .collect();
        if !pairs.is_empty() {
            let rep = warp_error_pairs(&out, &pairs, |m, t| {
                Some((sc.flow(m, t).clone(), sc.mask(m, t).clone()))
            })?;
            remote_acc += rep.value;
            remote_count += 1;
        }
    }
    let n_clips = held_out.clips.len() as f64;
    Ok(AblationRow {
        name: String::new(),
        psnr: psnr_acc / frames as f64,
        ssim: ssim_acc / frames as f64,
        warp_error: we_acc / n_clips,
        remote_warp_error: if remote_count > 0 { remote_acc / remote_count as f64 } else { f64::NAN },
        trainable_params: gen.store().num_trainable_scalars(),
        steps: 0,
    })
}

/// Shared desk-scale shapes for the harness.
pub struct HarnessSettings {
    pub resolution: (usize, usize),
    pub window_t: usize,
    pub gen_base: GeneratorConfig,
    pub disc: DiscriminatorConfig,
    pub seed: u64,
}

impl HarnessSettings {
    pub fn desk(resolution: (usize, usize), seed: u64) -> Self {
        let mut gen_base = GeneratorConfig::desk(resolution.0, resolution.1);
        gen_base.base_channels = 8;
        gen_base.extractor_base = 4;
        gen_base.extractor_channels = 8;
        gen_base.depth = 2;
        gen_base.nonlocal_positions = vec![1];
        HarnessSettings {
            resolution,
            window_t: 5,
            gen_base,
            disc: DiscriminatorConfig {
                base_channels: 8,
                num_downsamples: 2,
                power_iterations: 1,
                input_channels: 3,
            },
            seed,
        }
    }
}

/// Train one setting under the shared seed/budget and score it.
pub fn run_one(
    config: &AblationConfig,
    train_ds: &VideoDataset,
    held_out: &HeldOut,
    settings: &HarnessSettings,
    budget: &AblationBudget,
) -> Result<AblationRow> {
    let mut gen_cfg = settings.gen_base.clone();
    gen_cfg.use_gfe = config.use_gfe;
    gen_cfg.use_pfe = config.use_pfe;
    let mut gen = Generator::new(gen_cfg, settings.seed)?;

    // Shared stage-1 schedule: plain image pre-training.
    let mut s1 = TrainConfig::stage1(settings.resolution);
    s1.epochs = 1;
    s1.steps_per_epoch = budget.stage1_steps;
    s1.batch_size = 2;
    s1.seed = settings.seed;
    s1.lr_g = 1e-3;
    let image_ds = ImageDataset::from_rgb_frames(
        train_ds.videos.iter().flat_map(|v| v.color.frames().to_vec()),
    )?;
    let mut sink = TrainSink::in_memory();
    train_stage1(&mut gen, &image_ds, &s1, None, &mut sink)?;
    let mut steps = budget.stage1_steps;

    if config.scheme == TrainingScheme::TwoStage {
        let mut s2 = TrainConfig::stage2(settings.resolution);
        s2.epochs = 1;
        s2.steps_per_epoch = budget.stage2_steps;
        s2.window_t = settings.window_t;
        s2.seed = settings.seed;
        s2.weights = config.weights;
        s2.lr_g = 2e-4;
        s2.lr_d = 2e-4;
        let mut disc = PatchDiscriminator::new(settings.disc.clone(), settings.seed ^ 0xd15c)?;
        let mut sink = TrainSink::in_memory();
        train_stage2(&mut gen, &mut disc, train_ds, &s2, None, &mut sink)?;
        steps += budget.stage2_steps;
    }

    let mut row = evaluate_generator(&gen, held_out)?;
    row.name = config.name.to_string();
    row.steps = steps;
    Ok(row)
}

/// Run the requested settings and assemble the comparison table.
pub fn run_ablation(
    configs: &[AblationConfig],
    train_ds: &VideoDataset,
    held_out: &HeldOut,
    settings: &HarnessSettings,
    budget: &AblationBudget,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for c in configs {
        log::info!("ablation: running {}", c.name);
        rows.push(run_one(c, train_ds, held_out, settings, budget)?);
    }
    Ok(rows)
}

/// CSV form of the comparison table.
pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("name,psnr,ssim,warp_error,remote_warp_error,trainable_params,steps\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name, r.psnr, r.ssim, r.warp_error, r.remote_warp_error, r.trainable_params, r.steps
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn suite_enumerates_every_documented_setting() {
        let expected: BTreeSet<&str> = [
            "l(1)", "l(2)", "l(3.1)", "l(3.2)", "l(3.3)", "l(3.4)", "l(3.5)", "l(3.6)", "l(3.7)",
            "l(4.1)", "l(4.2)", "l(4.3)", "l(4.4)", "l(4.5)", "f(1)", "f(2)", "f(3)", "t(1)",
            "t(2)", "full",
        ]
        .into_iter()
        .collect();
        let got: BTreeSet<&str> = suite().iter().map(|c| c.name).collect();
        assert_eq!(got, expected);
        assert_eq!(suite().len(), expected.len(), "duplicate names");
        for c in suite() {
            assert!(c.weights.validate().is_ok(), "{} has invalid weights", c.name);
        }
    }

    #[test]
    fn baseline_and_term_sets_match_their_targets() {
        let s = suite();
        let l1_only = find_config(&s, "l(1)").unwrap();
        assert_eq!(l1_only.weights, w(10.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        let no_gan = find_config(&s, "l(3.3)").unwrap();
        assert_eq!(no_gan.weights.lambda_g, 0.0);
        assert!(no_gan.weights.lambda_1 > 0.0 && no_gan.weights.lambda_p > 0.0);
        let no_temporal = find_config(&s, "l(4.3)").unwrap();
        assert_eq!((no_temporal.weights.lambda_st, no_temporal.weights.lambda_dlt), (0.0, 0.0));
        let lt = find_config(&s, "l(4.4)").unwrap();
        assert!(lt.weights.lambda_lt > 0.0 && lt.weights.lambda_dlt == 0.0);
        let f3 = find_config(&s, "f(3)").unwrap();
        assert!(!f3.use_gfe && !f3.use_pfe);
        let t1 = find_config(&s, "t(1)").unwrap();
        assert_eq!(t1.scheme, TrainingScheme::Stage1Only);
        assert!(find_config(&s, "nope").is_err());
    }

    #[test]
    fn f3_runs_with_fewer_parameters() {
        let settings = HarnessSettings::desk((16, 16), 5);
        let mut full_cfg = settings.gen_base.clone();
        full_cfg.use_gfe = true;
        full_cfg.use_pfe = true;
        let full = Generator::new(full_cfg, 1).unwrap();
        let mut bare_cfg = settings.gen_base.clone();
        bare_cfg.use_gfe = false;
        bare_cfg.use_pfe = false;
        let bare = Generator::new(bare_cfg, 1).unwrap();
        assert!(bare.store().num_trainable_scalars() < full.store().num_trainable_scalars());
    }
}
