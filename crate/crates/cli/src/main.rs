use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use warpreg::checkpoint::Checkpoint;
use warpreg::config::ExperimentConfig;
use warpreg::data::read_mask_png;
use warpreg::geom::{warp_mask, ControlGrid, TpsParams};
use warpreg::locnet::LocNetModel;
use warpreg::matcher::MatcherModel;
use warpreg::pipeline::{self, PAIR_HEADER};
use warpreg::raster::{read_png_luma, write_gray_png, write_overlay_png, Plane};
use warpreg::{Error, Result};

/// Localize, crop and match: deformable registration of object masks.
#[derive(Parser, Debug)]
#[command(name = "warpreg", version)]
struct Cli {
    /// Experiment config (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-threaded execution for bit-exact reruns.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the composite train/val/test splits.
    GenData,
    /// Train the localizer on the generated data.
    TrainLocnet,
    /// Train the matcher on the generated data.
    TrainMatcher,
    /// Evaluate both models on the test split and write the report.
    Eval,
    /// Run every stage in order.
    Pipeline,
    /// Register one moving image against a fixed image.
    Register {
        #[arg(long)]
        locnet: Option<PathBuf>,
        #[arg(long)]
        matcher: PathBuf,
        #[arg(long)]
        moving: PathBuf,
        /// Moving mask PNG; defaults to the thresholded moving image.
        #[arg(long)]
        moving_mask: Option<PathBuf>,
        #[arg(long)]
        fixed: PathBuf,
        /// Target mask in the fixed image, used for scoring only.
        #[arg(long)]
        fixed_mask: Option<PathBuf>,
        /// Match the full frames without running the localizer.
        #[arg(long)]
        skip_localization: bool,
        /// Where to write the agreement overlay.
        #[arg(long, default_value = "overlay.png")]
        overlay: PathBuf,
    },
    /// Warp a mask by TPS parameters (one number per line).
    Warp {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    cfg.deterministic |= cli.deterministic;
    Ok(cfg)
}

fn read_params(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(line, l)| {
            l.parse::<f64>().map_err(|_| Error::Config {
                line,
                reason: format!("`{l}` is not a number"),
            })
        })
        .collect()
}

/// Control points per side for a flat parameter vector of length `n`.
fn grid_for(n: usize) -> Result<ControlGrid> {
    let k = n
        .checked_sub(6)
        .filter(|d| d % 2 == 0)
        .map(|d| ((d / 2) as f64).sqrt().round() as usize)
        .filter(|&k| 6 + 2 * k * k == n)
        .ok_or_else(|| Error::Parameter(format!("{n} values is not 6 + 2k² for any k")))?;
    ControlGrid::new(k)
}

fn warp(mask: &Path, params: &Path, output: &Path) -> Result<()> {
    let mask = read_mask_png(mask)?;
    let values = read_params(params)?;
    let grid = grid_for(values.len())?;
    let warped = warp_mask(&mask, &TpsParams::from_slice(&values, &grid)?, &grid)?;
    write_gray_png(output, &Plane::from_mask(&warped))
}

#[allow(clippy::too_many_arguments)]
fn register(
    cfg: &ExperimentConfig,
    locnet: Option<&Path>,
    matcher: &Path,
    moving: &Path,
    moving_mask: Option<&Path>,
    fixed: &Path,
    fixed_mask: Option<&Path>,
    skip_localization: bool,
    overlay: &Path,
) -> Result<()> {
    let loc = match (skip_localization, locnet) {
        (true, _) => None,
        (false, Some(p)) => Some(LocNetModel::<f32>::from_checkpoint(&Checkpoint::load(p)?)?),
        (false, None) => {
            return Err(Error::Parameter(
                "--locnet is required unless --skip-localization is given".into(),
            ))
        }
    };
    let matcher = MatcherModel::<f32>::from_checkpoint(&Checkpoint::load(matcher)?)?;
    let moving = read_png_luma(moving)?;
    let moving_mask = match moving_mask {
        Some(p) => read_mask_png(p)?,
        None => moving.to_mask(0.5),
    };
    let fixed = read_png_luma(fixed)?;
    let target = fixed_mask.map(read_mask_png).transpose()?;
    let e = pipeline::register_pair(
        loc.as_ref(),
        &matcher,
        &moving,
        &moving_mask,
        &fixed,
        target.as_ref(),
        cfg.matcher.lambda,
    )?;
    let reference = target.unwrap_or_else(|| pipeline::segment(&fixed));
    write_overlay_png(overlay, &reference, &e.warped)?;
    if e.fallback {
        log::warn!("no detection; matched against the whole fixed image");
    }
    println!("{PAIR_HEADER}");
    println!("{}", e.record());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli).map_err(|e| e.in_stage("config"))?;
    if cfg.deterministic {
        warpreg::par::set_sequential(true);
    }
    match &cli.command {
        Command::GenData => pipeline::gen_data(&cfg),
        Command::TrainLocnet => pipeline::train_locnet_stage(&cfg).map(|o| {
            info!("best localizer epoch {} (val dice {:.4})", o.best_epoch, o.best_dice);
        }),
        Command::TrainMatcher => pipeline::train_matcher_stage(&cfg).map(|o| {
            info!("best matcher epoch {} (val dice {:.4})", o.best_epoch, o.best_dice);
        }),
        Command::Eval => pipeline::eval_stage(&cfg).map(|r| print!("{r}")),
        Command::Pipeline => pipeline::run_experiment(&cfg).map(|r| print!("{r}")),
        Command::Register {
            locnet,
            matcher,
            moving,
            moving_mask,
            fixed,
            fixed_mask,
            skip_localization,
            overlay,
        } => register(
            &cfg,
            locnet.as_deref(),
            matcher,
            moving,
            moving_mask.as_deref(),
            fixed,
            fixed_mask.as_deref(),
            *skip_localization,
            overlay,
        )
        .map_err(|e| e.in_stage("register")),
        Command::Warp { mask, params, output } => warp(mask, params, output).map_err(|e| e.in_stage("warp")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
