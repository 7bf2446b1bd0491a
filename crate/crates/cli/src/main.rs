use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use eegdm::backbone::TapKind;
use eegdm::diffusion::{ExtractionMode, ScheduleKind};
use eegdm::latent::PoolKind;
use eegdm::lft::FusionKind;
use eegdm::signal::Split;
use eegdm::{Error, Result};
use eegdm_cli::pipeline;
use eegdm_cli::{error_line, exit_code, LayerSelection, RunConfig};

#[derive(Parser)]
#[command(name = "eegdm", version, about = "Diffusion-pretrained SSM features and latent fusion classification for multichannel biosignals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Starting preset: desk or paper.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    /// JSON configuration; keys may be dotted paths.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set backbone.n_layers=8`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    run: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labelled dataset.
    Synth {
        /// Per-class count ratio, e.g. `10:1`.
        #[arg(long)]
        imbalance: Option<String>,
    },
    /// Diffusion-pretrain the backbone.
    Pretrain {
        #[arg(long)]
        resume: bool,
        /// cosine or linear.
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Cache pooled latents of every split.
    Extract(ExtractArgs),
    /// Train classifiers on the cached latents.
    Finetune {
        #[command(flatten)]
        extract: ExtractArgs,
        /// all, first-half, second-half, q1..q4.
        #[arg(long)]
        layers: Option<LayerSelection>,
        /// base (latent), none or mean.
        #[arg(long)]
        fusion: Option<String>,
        #[arg(long)]
        class_weights: bool,
        #[arg(long)]
        seeds: Option<usize>,
        /// Pre-built latent cache directory.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Score trained classifiers.
    Eval {
        #[command(flatten)]
        extract: ExtractArgs,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Resample the data to this rate (Hz) before scoring.
        #[arg(long)]
        resample_test: Option<f64>,
    },
    /// Sample signals from the backbone.
    Generate {
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value = "generated")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    tap: Option<TapKind>,
    #[arg(long)]
    pool: Option<PoolKind>,
    #[arg(long)]
    mode: Option<ExtractionMode>,
    #[arg(long)]
    step: Option<usize>,
}

impl ExtractArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let e = &mut cfg.extract;
        e.tap = self.tap.unwrap_or(e.tap);
        e.pool = self.pool.unwrap_or(e.pool);
        e.mode = self.mode.unwrap_or(e.mode);
        e.step = self.step.unwrap_or(e.step);
    }
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = RunConfig::preset(&c.preset)?;
    if let Some(path) = &c.config {
        cfg.merge_file(path)?;
    }
    for s in &c.sets {
        cfg.set(s)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &c.data {
        cfg.data_dir = d.clone();
    }
    if let Some(r) = &c.run {
        cfg.run_dir = r.clone();
    }
    match &cli.command {
        Command::Synth { imbalance: Some(ratio) } => {
            let weights: Vec<f64> = ratio
                .split(':')
                .map(|w| w.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad imbalance ratio {ratio:?}"))))
                .collect::<Result<_>>()?;
            let k = weights.len();
            if k < 2 || weights.iter().any(|&w| w <= 0.0) {
                return Err(Error::Config(format!("imbalance needs two or more positive weights, got {ratio:?}")));
            }
            if k != cfg.synth.recipes.len() {
                cfg.synth.recipes = (0..k).map(|i| eegdm::signal::ClassRecipe::band(4.0 + 8.0 * i as f64)).collect();
                cfg.synth.test_per_class = vec![cfg.synth.test_per_class[0]; k];
            }
            let top = weights.iter().copied().fold(0.0, f64::max);
            let base = cfg.synth.n_per_class.iter().copied().max().unwrap_or(100) as f64;
            cfg.synth.n_per_class = weights.iter().map(|w| ((base * w / top).round() as usize).max(1)).collect();
        }
        Command::Pretrain { schedule, epochs, .. } => {
            if let Some(s) = schedule {
                cfg.backbone.schedule = match s.as_str() {
                    "cosine" => ScheduleKind::default(),
                    "linear" => ScheduleKind::scaled_linear(cfg.backbone.steps),
                    other => return Err(Error::Config(format!("unknown schedule {other:?}"))),
                };
            }
            if let Some(e) = epochs {
                cfg.pretrain.optim.epochs = *e;
            }
        }
        Command::Extract(a) => a.apply(&mut cfg),
        Command::Finetune { extract, layers, fusion, class_weights, seeds, cache } => {
            extract.apply(&mut cfg);
            if let Some(l) = layers {
                cfg.layers = *l;
            }
            if let Some(f) = fusion {
                cfg.lft.fusion = if f == "base" { FusionKind::Latent } else { f.parse()? };
            }
            cfg.finetune.class_weighted |= class_weights;
            if let Some(s) = seeds {
                cfg.seeds = *s;
            }
            if let Some(c) = cache {
                cfg.latent_cache = Some(c.clone());
            }
        }
        Command::Eval { extract, .. } => extract.apply(&mut cfg),
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = build_config(&cli)?;
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().map_err(|e| Error::Config(e.to_string()))?;
    }
    log::info!("seed {}", cfg.seed);
    match cli.command {
        Command::Synth { .. } => {
            let m = pipeline::run_synth(&cfg)?;
            let hist: Vec<_> = Split::ALL.iter().map(|&s| (s, m.histogram(s))).collect();
            emit(&serde_json::json!({ "dir": cfg.data_dir, "classes": m.class_names, "histogram": hist, "seed": cfg.seed }))
        }
        Command::Pretrain { resume, .. } => {
            let hist = pipeline::run_pretrain(&cfg, resume)?;
            emit(&serde_json::json!({ "checkpoint": pipeline::backbone_dir(&cfg), "epochs": hist, "seed": cfg.seed }))
        }
        Command::Extract(_) => emit(&pipeline::run_extract(&cfg)?),
        Command::Finetune { .. } => emit(&pipeline::run_finetune(&cfg)?),
        Command::Eval { split, resample_test, .. } => emit(&pipeline::run_eval(&cfg, split, resample_test)?),
        Command::Generate { count, out } => emit(&pipeline::run_generate(&cfg, count, &out)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() && !matches!(e.kind(), clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => {
            let err = Error::Config(e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string());
            eprintln!("{}", error_line(&err));
            return ExitCode::from(2);
        }
        Err(e) => e.exit(),
    };
    let level = if cli.common.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
