use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use panet::model::build_model;
use panet_cli::ablate::{format_ablation, parse_rows, run_ablation};
use panet_cli::checkpoint::Checkpoint;
use panet_cli::config::TrainConfig;
use panet_cli::dataset::SplitName;
use panet_cli::predict::run_predict;
use panet_cli::segment::run_evaluate;
use panet_cli::summarize::{compare, format_summaries, parse_size, summarize};
use panet_cli::train::train;
use panet_cli::{CliError, Inner, Result, TrainBackend};

#[derive(Parser)]
#[command(name = "panet", version, about = "Prior Attention Network segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; prints the selected checkpoint path.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: SplitName,
        /// Also write the per-case report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Segment a directory or manifest of images and write masks and overlays.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Parameter count and multiply-accumulates at an input size.
    Summarize {
        #[arg(long)]
        config: PathBuf,
        /// `H,W` or `H,W,D`.
        #[arg(long)]
        input_size: String,
        /// Report the skip weights of a trained checkpoint instead of a fresh network.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also list the baseline networks.
        #[arg(long)]
        compare: bool,
    },
    /// Train and evaluate decoder ablation variants.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "no1,no2,no3,no4")]
        rows: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    let device = Default::default();
    match cli.command {
        Command::Train { config, seed, resume } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let outcome = train::<TrainBackend>(&cfg, resume.as_deref(), &device)?;
            println!("{}", outcome.selected.display());
        }
        Command::Evaluate {
            config,
            checkpoint,
            split,
            json,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let (report, table) = run_evaluate::<Inner>(&cfg, &checkpoint, split, &device)?;
            print!("{table}");
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
            }
        }
        Command::Predict {
            config,
            checkpoint,
            input,
            output,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let summary = run_predict::<Inner>(&cfg, &checkpoint, &input, &output, &device)?;
            println!("{} written, {} skipped", summary.written.len(), summary.skipped.len());
            for (id, reason) in &summary.skipped {
                println!("skipped {id}: {reason}");
            }
        }
        Command::Summarize {
            config,
            input_size,
            checkpoint,
            compare: with_baselines,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let size = parse_size(&input_size, cfg.network.dims())?;
            let rows = if with_baselines {
                compare::<Inner>(&cfg.network, size, &device)?
            } else {
                let model = match checkpoint {
                    Some(path) => Checkpoint::read(&path)?.load_model::<Inner>(&device)?,
                    None => {
                        let mut net = cfg.network.clone();
                        net.encoder.pretrained_weights_path = None;
                        build_model::<Inner>(&net, cfg.seed, &device)?
                    }
                };
                vec![summarize(&model, size, &device)?]
            };
            print!("{}", format_summaries(&rows));
        }
        Command::Ablate { config, rows } => {
            let cfg = TrainConfig::load(&config)?;
            let rows = parse_rows(&rows)?;
            let results = run_ablation::<TrainBackend>(&cfg, &rows, &device)?;
            print!("{}", format_ablation(&results, cfg.case_spec()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
