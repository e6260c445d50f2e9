mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use echodx_core::train::Subset;

use config::{ConfigError, EmbedSources, RunConfig};
use pipeline::StageError;

/// Classify cardiac cine loops, explain the predictions and embed the clips.
#[derive(Parser)]
#[command(name = "echodx", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key=value` run configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Clip manifest (defaults to `<data_dir>/manifest.tsv`).
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory holding split, checkpoint and results.
    #[arg(long, visible_alias = "run")]
    out: Option<PathBuf>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic phantom dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        per_class: Option<usize>,
        /// lv or valve.
        #[arg(long)]
        task: Option<String>,
    },
    /// Split, build the intensity reference and write prepared clips.
    Preprocess {
        #[command(flatten)]
        common: Common,
    },
    /// Stratified train/val/test split.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Train with early stopping, then evaluate on the test split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate the saved checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Two-dimensional embedding of learned features and/or raw pixels.
    Embed {
        #[command(flatten)]
        common: Common,
        /// features, pixels or both.
        #[arg(long)]
        source: Option<String>,
    },
    /// Rank clips by predicted probability of one class.
    RankNormal {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, default_value = "test")]
        subset: String,
    },
    /// DeepLIFT heatmaps for chosen clips, or the top-ranked ones.
    Attribute {
        #[command(flatten)]
        common: Common,
        #[arg(long = "sample")]
        samples: Vec<String>,
        /// Class whose logit is explained.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Every stage in order: synth, split, train, embed, rank-normal, attribute.
    All {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        per_class: Option<usize>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("error in stage `{}`: {}", .0.stage, .0.source)]
    Stage(#[from] StageError),
}

fn load_config(common: &Common) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_text(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &common.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(o) = &common.out {
        cfg.run_dir = o.clone();
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.network()?;
    Ok(cfg)
}

fn parse_sources(s: Option<&str>, default: EmbedSources) -> Result<EmbedSources, ConfigError> {
    match s {
        None => Ok(default),
        Some(v) => {
            let mut probe = RunConfig::default();
            probe.set("embed_source", v)?;
            Ok(probe.embed_source)
        }
    }
}

fn run_all(cfg: &RunConfig) -> Result<(), StageError> {
    pipeline::synth(cfg)?;
    let m = echodx_core::dataset::Manifest::read(cfg.manifest_path()).map_err(|source| StageError {
        stage: "split",
        source,
    })?;
    pipeline::split(cfg, &m, "split")?;
    let t = pipeline::train(cfg)?;
    println!("accuracy\t{:.6}", t.accuracy);
    println!("best_epoch\t{}\t{}", t.best_epoch, t.epochs);
    pipeline::embed(cfg, cfg.embed_source)?;
    pipeline::rank(cfg, cfg.attribute_class, Subset::Test)?;
    let a = pipeline::attribute(cfg, cfg.attribute_class, &[], cfg.attribute_top)?;
    if let Some(f) = a.mask_fraction {
        println!("attribution_mask_fraction\t{f:.6}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            common,
            per_class,
            task,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = per_class {
                cfg.per_class = n;
            }
            if let Some(t) = task {
                cfg.set("task", &t)?;
            }
            // for synth, --out names the data directory
            if let Some(o) = &common.out {
                cfg.data_dir = o.clone();
            }
            pipeline::synth(&cfg)?;
        }
        Command::Preprocess { common } => pipeline::preprocess(&load_config(&common)?, true)?,
        Command::Split { common } => {
            let cfg = load_config(&common)?;
            let m = echodx_core::dataset::Manifest::read(cfg.manifest_path()).map_err(|source| StageError {
                stage: "split",
                source,
            })?;
            pipeline::split(&cfg, &m, "split")?;
        }
        Command::Train { common } => {
            let t = pipeline::train(&load_config(&common)?)?;
            println!("accuracy\t{:.6}", t.accuracy);
        }
        Command::Eval { common } => {
            let acc = pipeline::eval(&load_config(&common)?)?;
            println!("accuracy\t{acc:.6}");
        }
        Command::Embed { common, source } => {
            let cfg = load_config(&common)?;
            let sources = parse_sources(source.as_deref(), cfg.embed_source)?;
            pipeline::embed(&cfg, sources)?;
        }
        Command::RankNormal { common, class, subset } => {
            let cfg = load_config(&common)?;
            let subset = Subset::parse(&subset).map_err(|e| ConfigError(e.to_string()))?;
            for (_, id, label, p) in pipeline::rank(&cfg, class.unwrap_or(cfg.attribute_class), subset)? {
                println!("{id}\t{label}\t{p:.6}");
            }
        }
        Command::Attribute {
            common,
            samples,
            class,
            top,
        } => {
            let cfg = load_config(&common)?;
            let a = pipeline::attribute(
                &cfg,
                class.unwrap_or(cfg.attribute_class),
                &samples,
                top.unwrap_or(cfg.attribute_top),
            )?;
            println!("attributed\t{}", a.samples.join(","));
            if let (Some(f), Some(area)) = (a.mask_fraction, a.mask_area) {
                println!("attribution_mask_fraction\t{f:.6}");
                println!("mask_area\t{area:.6}");
            }
        }
        Command::All { common, per_class } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = per_class {
                cfg.per_class = n;
            }
            run_all(&cfg)?;
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), ConfigError> {
    let Ok(v) = std::env::var("ECHODX_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| ConfigError(format!("ECHODX_THREADS: expected a thread count, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| ConfigError(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_threads().map_err(CliError::from).and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ CliError::Config(_)) => {
            eprintln!("echodx: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("echodx: {e}");
            ExitCode::FAILURE
        }
    }
}
