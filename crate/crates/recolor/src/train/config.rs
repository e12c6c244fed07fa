//! Run configuration: a flat key = value text format covering the
//! training schedule, model shapes, and data paths. Unknown keys are
//! rejected; every run writes its fully-resolved configuration next to
//! its outputs.

use crate::error::{Error, Result};
use crate::losses::{LossWeights, TermReduction};
use crate::model::{DiscriminatorConfig, GeneratorConfig, DEFAULT_PERCEPTUAL_SEED};
use std::fmt::Write as _;
use std::path::Path;

/// Learning-rate schedule over 1-based epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    /// Halve once, after `n` completed epochs.
    HalveAfter(usize),
    /// Halve after every `n` completed epochs.
    HalveEvery(usize),
}

impl LrSchedule {
    pub fn lr(&self, base: f64, epoch: usize) -> f64 {
        let epoch = epoch.max(1);
        match *self {
            LrSchedule::HalveAfter(n) => {
                if epoch > n {
                    base * 0.5
                } else {
                    base
                }
            }
            LrSchedule::HalveEvery(n) => base * 0.5f64.powi(((epoch - 1) / n.max(1)) as i32),
        }
    }
}

/// Two-stage optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: u8,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sliding-window length for stage 2.
    pub window_t: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_schedule: LrSchedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub resolution: (usize, usize),
    /// 0 means: derive from the dataset size.
    pub steps_per_epoch: usize,
    /// Checkpoint every N steps; 0 means only at the end.
    pub checkpoint_every: usize,
    pub log_every: usize,
    /// Non-occlusion mask sharpness for the temporal losses.
    pub mask_alpha: f64,
    /// Photometric threshold of metric-side binary masks.
    pub mask_threshold: f64,
    /// Normalize temporal terms by pair count instead of plain summing.
    pub per_pair_mean: bool,
    pub perceptual_seed: u64,
}

impl TrainConfig {
    pub fn stage1(resolution: (usize, usize)) -> Self {
        TrainConfig {
            stage: 1,
            epochs: 20,
            batch_size: 4,
            window_t: 5,
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_schedule: LrSchedule::HalveAfter(10),
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            seed: 0,
            resolution,
            steps_per_epoch: 0,
            checkpoint_every: 0,
            log_every: 10,
            mask_alpha: 50.0,
            mask_threshold: 0.01,
            per_pair_mean: false,
            perceptual_seed: DEFAULT_PERCEPTUAL_SEED,
        }
    }

    pub fn stage2(resolution: (usize, usize)) -> Self {
        TrainConfig {
            stage: 2,
            epochs: 20,
            batch_size: 1,
            window_t: 5,
            lr_g: 5e-5,
            lr_d: 5e-5,
            lr_schedule: LrSchedule::HalveEvery(100),
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            seed: 0,
            resolution,
            steps_per_epoch: 0,
            checkpoint_every: 0,
            log_every: 10,
            mask_alpha: 50.0,
            mask_threshold: 0.01,
            per_pair_mean: false,
            perceptual_seed: DEFAULT_PERCEPTUAL_SEED,
        }
    }

    pub fn reduction(&self) -> TermReduction {
        if self.per_pair_mean {
            TermReduction::MeanOverPairs
        } else {
            TermReduction::SumOverPairs
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage != 1 && self.stage != 2 {
            return Err(Error::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.stage == 2 && self.window_t < 3 {
            return Err(Error::Config("stage 2 needs window_t >= 3".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.mask_alpha <= 0.0 || self.mask_threshold <= 0.0 {
            return Err(Error::Config("mask_alpha and mask_threshold must be positive".into()));
        }
        self.weights.validate()
    }
}

/// Everything one command needs: schedule, model shapes, data locations.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub gen: GeneratorConfig,
    pub disc: DiscriminatorConfig,
    pub data_dir: String,
    pub synth_clips: usize,
    pub synth_length: usize,
}

impl RunConfig {
    pub fn default_for(resolution: (usize, usize)) -> Self {
        RunConfig {
            train: TrainConfig::stage1(resolution),
            gen: GeneratorConfig::desk(resolution.0, resolution.1),
            disc: DiscriminatorConfig::desk(),
            data_dir: String::new(),
            synth_clips: 8,
            synth_length: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.gen.validate()?;
        self.disc.validate()?;
        if self.gen.input_resolution != self.train.resolution {
            return Err(Error::Config(
                "generator input_resolution must match the training resolution".into(),
            ));
        }
        Ok(())
    }

    /// Apply one `key = value` assignment; unknown keys are rejected.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let pu = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("bad integer for {key}: {value}")))
        };
        let pf = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("bad float for {key}: {value}")))
        };
        let pb = |v: &str| -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!("bad bool for {key}: {value}"))),
            }
        };
        match key {
            "stage" => {
                let s = pu(value)? as u8;
                // Switching stages also switches the schedule defaults
                // unless they are explicitly overridden later.
                if s != self.train.stage {
                    let mut fresh = if s == 1 {
                        TrainConfig::stage1(self.train.resolution)
                    } else {
                        TrainConfig::stage2(self.train.resolution)
                    };
                    fresh.seed = self.train.seed;
                    self.train = fresh;
                }
            }
            "epochs" => self.train.epochs = pu(value)?,
            "batch_size" => self.train.batch_size = pu(value)?,
            "window_t" => self.train.window_t = pu(value)?,
            "lr_g" => self.train.lr_g = pf(value)?,
            "lr_d" => self.train.lr_d = pf(value)?,
            "lr_schedule" => {
                let n = match self.train.lr_schedule {
                    LrSchedule::HalveAfter(n) | LrSchedule::HalveEvery(n) => n,
                };
                self.train.lr_schedule = match value {
                    "halve_after" => LrSchedule::HalveAfter(n),
                    "halve_every" => LrSchedule::HalveEvery(n),
                    _ => {
                        return Err(Error::Config(format!(
                            "lr_schedule must be halve_after or halve_every, got {value}"
                        )))
                    }
                };
            }
            "lr_schedule_epochs" => {
                let n = pu(value)?;
                self.train.lr_schedule = match self.train.lr_schedule {
                    LrSchedule::HalveAfter(_) => LrSchedule::HalveAfter(n),
                    LrSchedule::HalveEvery(_) => LrSchedule::HalveEvery(n),
                };
            }
            "adam_beta1" => self.train.adam_beta1 = pf(value)?,
            "adam_beta2" => self.train.adam_beta2 = pf(value)?,
            "lambda_1" => self.train.weights.lambda_1 = pf(value)?,
            "lambda_p" => self.train.weights.lambda_p = pf(value)?,
            "lambda_g" => self.train.weights.lambda_g = pf(value)?,
            "lambda_st" => self.train.weights.lambda_st = pf(value)?,
            "lambda_dlt" => self.train.weights.lambda_dlt = pf(value)?,
            "lambda_lt" => self.train.weights.lambda_lt = pf(value)?,
            "seed" => {
                self.train.seed =
                    value.parse().map_err(|_| Error::Config(format!("bad seed: {value}")))?;
            }
            "height" => {
                self.train.resolution.0 = pu(value)?;
                self.gen.input_resolution.0 = self.train.resolution.0;
            }
            "width" => {
                self.train.resolution.1 = pu(value)?;
                self.gen.input_resolution.1 = self.train.resolution.1;
            }
            "steps_per_epoch" => self.train.steps_per_epoch = pu(value)?,
            "checkpoint_every" => self.train.checkpoint_every = pu(value)?,
            "log_every" => self.train.log_every = pu(value)?,
            "mask_alpha" => self.train.mask_alpha = pf(value)?,
            "mask_threshold" => self.train.mask_threshold = pf(value)?,
            "per_pair_mean" => self.train.per_pair_mean = pb(value)?,
            "perceptual_seed" => {
                self.train.perceptual_seed =
                    value.parse().map_err(|_| Error::Config(format!("bad seed: {value}")))?;
            }
            "gen_base_channels" => self.gen.base_channels = pu(value)?,
            "gen_depth" => self.gen.depth = pu(value)?,
            "gen_extractor_base" => self.gen.extractor_base = pu(value)?,
            "gen_extractor_channels" => self.gen.extractor_channels = pu(value)?,
            "gen_extractor_res_blocks" => self.gen.extractor_res_blocks = pu(value)?,
            "gen_nonlocal_positions" => {
                let mut positions = Vec::new();
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    positions.push(
                        part.parse()
                            .map_err(|_| Error::Config(format!("bad position list: {value}")))?,
                    );
                }
                self.gen.nonlocal_positions = positions;
            }
            "gen_use_gfe" => self.gen.use_gfe = pb(value)?,
            "gen_use_pfe" => self.gen.use_pfe = pb(value)?,
            "disc_base_channels" => self.disc.base_channels = pu(value)?,
            "disc_downsamples" => self.disc.num_downsamples = pu(value)?,
            "disc_power_iterations" => self.disc.power_iterations = pu(value)?,
            "data_dir" => self.data_dir = value.to_string(),
            "synth_clips" => self.synth_clips = pu(value)?,
            "synth_length" => self.synth_length = pu(value)?,
            _ => return Err(Error::Config(format!("unknown config key: {key}"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file ('#' starts a comment line).
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key = value", path.display(), lineno + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply repeatable `--set key=value` overrides.
    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects key=value, got {s}")))?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Fully-resolved configuration as the same flat text format.
    pub fn to_kv_text(&self) -> String {
        let t = &self.train;
        let (sched, sched_n) = match t.lr_schedule {
            LrSchedule::HalveAfter(n) => ("halve_after", n),
            LrSchedule::HalveEvery(n) => ("halve_every", n),
        };
        let mut s = String::new();
        let _ = writeln!(s, "stage = {}", t.stage);
        let _ = writeln!(s, "epochs = {}", t.epochs);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "window_t = {}", t.window_t);
        let _ = writeln!(s, "lr_g = {}", t.lr_g);
        let _ = writeln!(s, "lr_d = {}", t.lr_d);
        let _ = writeln!(s, "lr_schedule = {sched}");
        let _ = writeln!(s, "lr_schedule_epochs = {sched_n}");
        let _ = writeln!(s, "adam_beta1 = {}", t.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", t.adam_beta2);
        let _ = writeln!(s, "lambda_1 = {}", t.weights.lambda_1);
        let _ = writeln!(s, "lambda_p = {}", t.weights.lambda_p);
        let _ = writeln!(s, "lambda_g = {}", t.weights.lambda_g);
        let _ = writeln!(s, "lambda_st = {}", t.weights.lambda_st);
        let _ = writeln!(s, "lambda_dlt = {}", t.weights.lambda_dlt);
        let _ = writeln!(s, "lambda_lt = {}", t.weights.lambda_lt);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "height = {}", t.resolution.0);
        let _ = writeln!(s, "width = {}", t.resolution.1);
        let _ = writeln!(s, "steps_per_epoch = {}", t.steps_per_epoch);
        let _ = writeln!(s, "checkpoint_every = {}", t.checkpoint_every);
        let _ = writeln!(s, "log_every = {}", t.log_every);
        let _ = writeln!(s, "mask_alpha = {}", t.mask_alpha);
        let _ = writeln!(s, "mask_threshold = {}", t.mask_threshold);
        let _ = writeln!(s, "per_pair_mean = {}", t.per_pair_mean);
        let _ = writeln!(s, "perceptual_seed = {}", t.perceptual_seed);
        s.push_str(&gen_config_core_kv(&self.gen));
        s.push_str(&disc_config_kv(&self.disc));
        let _ = writeln!(s, "data_dir = {}", self.data_dir);
        let _ = writeln!(s, "synth_clips = {}", self.synth_clips);
        let _ = writeln!(s, "synth_length = {}", self.synth_length);
        s
    }
}

fn gen_config_core_kv(g: &GeneratorConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "gen_base_channels = {}", g.base_channels);
    let _ = writeln!(s, "gen_depth = {}", g.depth);
    let _ = writeln!(s, "gen_extractor_base = {}", g.extractor_base);
    let _ = writeln!(s, "gen_extractor_channels = {}", g.extractor_channels);
    let _ = writeln!(s, "gen_extractor_res_blocks = {}", g.extractor_res_blocks);
    let positions: Vec<String> = g.nonlocal_positions.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(s, "gen_nonlocal_positions = {}", positions.join(","));
    let _ = writeln!(s, "gen_use_gfe = {}", g.use_gfe);
    let _ = writeln!(s, "gen_use_pfe = {}", g.use_pfe);
    s
}

/// Standalone generator-config text (checkpoint payload): the core keys
/// plus the input resolution.
pub fn gen_config_kv(g: &GeneratorConfig) -> String {
    let mut s = gen_config_core_kv(g);
    let _ = writeln!(s, "height = {}", g.input_resolution.0);
    let _ = writeln!(s, "width = {}", g.input_resolution.1);
    s
}

pub fn disc_config_kv(d: &DiscriminatorConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "disc_base_channels = {}", d.base_channels);
    let _ = writeln!(s, "disc_downsamples = {}", d.num_downsamples);
    let _ = writeln!(s, "disc_power_iterations = {}", d.power_iterations);
    s
}

/// Parse a generator config back out of kv text (checkpoint payloads).
pub fn gen_config_from_kv(text: &str) -> Result<GeneratorConfig> {
    let mut rc = RunConfig::default_for((16, 16));
    apply_kv_text(&mut rc, text)?;
    Ok(rc.gen)
}

/// Parse a discriminator config back out of kv text.
pub fn disc_config_from_kv(text: &str) -> Result<DiscriminatorConfig> {
    let mut rc = RunConfig::default_for((16, 16));
    apply_kv_text(&mut rc, text)?;
    Ok(rc.disc)
}

fn apply_kv_text(rc: &mut RunConfig, text: &str) -> Result<()> {
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("bad kv line: {line}")))?;
        rc.apply(key.trim(), value.trim())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_matches_documented_points() {
        let s1 = LrSchedule::HalveAfter(10);
        assert_eq!(s1.lr(2e-4, 5), 2e-4);
        assert_eq!(s1.lr(2e-4, 10), 2e-4);
        assert_eq!(s1.lr(2e-4, 12), 1e-4);
        let s2 = LrSchedule::HalveEvery(100);
        assert_eq!(s2.lr(5e-5, 100), 5e-5);
        assert_eq!(s2.lr(5e-5, 101), 2.5e-5);
        assert_eq!(s2.lr(5e-5, 250), 1.25e-5);
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut rc = RunConfig::default_for((16, 16));
        assert!(rc.apply("no_such_key", "5").is_err());
        assert!(rc.apply("epochs", "nope").is_err());
    }

    #[test]
    fn kv_round_trip_is_stable() {
        let mut rc = RunConfig::default_for((32, 32));
        rc.apply("stage", "2").unwrap();
        rc.apply("lambda_st", "0").unwrap();
        rc.apply("gen_nonlocal_positions", "1,2").unwrap();
        let text = rc.to_kv_text();
        let mut rc2 = RunConfig::default_for((16, 16));
        apply_kv_text(&mut rc2, &text).unwrap();
        assert_eq!(rc, rc2);
    }

    #[test]
    fn stage2_requires_window() {
        let mut rc = RunConfig::default_for((16, 16));
        rc.apply("stage", "2").unwrap();
        rc.apply("window_t", "2").unwrap();
        assert!(rc.validate().is_err());
    }
}
