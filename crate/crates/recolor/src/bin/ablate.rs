//! Ablation harness: trains the named settings under one seed and step
//! budget on synthetic data and writes the comparison table.

use clap::Parser;
use rand::SeedableRng;
use recolor::ablation::{
    find_config, rows_to_csv, run_ablation, AblationBudget, HarnessSettings, HeldOut,
};
use recolor::synth::{make_clip, random_spec};
use recolor::train::VideoDataset;

#[derive(Parser, Debug)]
#[command(name = "recolor-ablate", about = "Run ablation settings and tabulate metrics")]
struct Opts {
    /// Output CSV path.
    #[arg(long)]
    out: std::path::PathBuf,
    /// Settings to run (default: all).
    #[arg(long = "only")]
    only: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Frame edge length (square frames).
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 60)]
    stage1_steps: usize,
    #[arg(long, default_value_t = 120)]
    stage2_steps: usize,
    #[arg(long, default_value_t = 6)]
    train_clips: usize,
    #[arg(long, default_value_t = 4)]
    heldout_clips: usize,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(Opts::parse()) {
        eprintln!("error: {e}");
        std::process::exit(2);
    }
}

fn run(opts: Opts) -> recolor::Result<()> {
    let res = (opts.resolution, opts.resolution);
    let settings = HarnessSettings::desk(res, opts.seed);

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7ea1);
    let clips: Vec<_> = (0..opts.train_clips)
        .map(|i| make_clip(&random_spec(res.0, res.1, 12, &mut rng), opts.seed + i as u64))
        .collect::<recolor::Result<_>>()?;
    let train_ds = VideoDataset::from_synth(&clips)?;
    let held_out = HeldOut::generate(opts.heldout_clips, res.0, res.1, 12, opts.seed ^ 0x0e1d)?;

    let suite = recolor::ablation::suite();
    let selected: Vec<_> = if opts.only.is_empty() {
        suite.clone()
    } else {
        opts.only
            .iter()
            .map(|n| find_config(&suite, n).cloned())
            .collect::<recolor::Result<_>>()?
    };

    let budget =
        AblationBudget { stage1_steps: opts.stage1_steps, stage2_steps: opts.stage2_steps };
    let rows = run_ablation(&selected, &train_ds, &held_out, &settings, &budget)?;
    let csv = rows_to_csv(&rows);
    std::fs::write(&opts.out, &csv)
        .map_err(|e| recolor::Error::io(&opts.out, e))?;
    print!("{csv}");
    Ok(())
}
