use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use meshgnn::cli;
use meshgnn::features::RadiusPolicy;
use meshgnn::gnn::SubmodelMode;
use meshgnn::inspection::Layer;
use meshgnn::training::{Registration, TrainConfig};

#[derive(Parser)]
#[command(name = "meshgnn", version, about = "Mesh-graph GCN shape classification pipeline")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-site mesh dataset archive
    Generate {
        /// Generator spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        /// Override the spec's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Register meshes (optional) and compute FPFH node features
    Preprocess {
        /// Dataset archive directory (from `generate`)
        #[arg(long)]
        dataset: PathBuf,
        /// Rigid registration to a reference subject: on|off
        #[arg(long, default_value = "on")]
        register: String,
        /// FPFH neighborhood radius: `auto` or a value in mm
        #[arg(long, default_value = "auto")]
        radius: String,
        /// Reference subject index for registration
        #[arg(long, default_value_t = 0)]
        reference: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-graph GCN classifier
    Train {
        /// Features archive directory (from `preprocess`)
        #[arg(long)]
        features: PathBuf,
        /// Training config file (.toml or .json); defaults apply otherwise
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the submodel mode: shared|non-shared
        #[arg(long)]
        mode: Option<String>,
        /// Override the run seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the epoch count
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Layer-wise embedding reports (PCA scatter + silhouette)
    Inspect {
        /// Checkpoint directory (from `train`)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Features archive directory
        #[arg(long)]
        features: PathBuf,
        /// Comma-separated layers to inspect
        #[arg(long, default_value = "gcn,fc1,fc2")]
        layers: String,
        /// Cap per group when sampling subjects for the reports
        #[arg(long, default_value_t = 500)]
        sample_cap: usize,
        /// Sampling seed (defaults to the checkpoint's seed)
        #[arg(long)]
        seed: Option<u64>,
        /// Also render SVG scatter plots
        #[arg(long)]
        svg: bool,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC curves and AUC on the test split
    Evaluate {
        /// Checkpoint directory (from `train`)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Features archive directory
        #[arg(long)]
        features: PathBuf,
        /// Additionally report one ROC per site
        #[arg(long)]
        per_site: bool,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute the four-variant experiment grid on one dataset
    RunAll {
        /// Generator spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        /// Training config file (.toml or .json)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the run seed (training)
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> meshgnn::Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn run(args: Args) -> meshgnn::Result<()> {
    match args.command {
        Command::Generate { spec, seed, out } => cli::cmd_generate(&spec, seed, &out),
        Command::Preprocess {
            dataset,
            register,
            radius,
            reference,
            out,
        } => {
            let register: Registration = register.parse()?;
            let radius: RadiusPolicy = radius.parse()?;
            cli::cmd_preprocess(&dataset, register, radius, reference, &out)
        }
        Command::Train {
            features,
            config,
            mode,
            seed,
            epochs,
            out,
        } => {
            let mut config = load_config(&config)?;
            if let Some(mode) = mode {
                config.mode = mode.parse::<SubmodelMode>()?;
            }
            if let Some(seed) = seed {
                config.seed = seed;
            }
            if let Some(epochs) = epochs {
                config.epochs = epochs;
            }
            cli::cmd_train(&features, &config, &out)
        }
        Command::Inspect {
            checkpoint,
            features,
            layers,
            sample_cap,
            seed,
            svg,
            out,
        } => {
            let layers = layers
                .split(',')
                .map(|s| s.trim().parse::<Layer>())
                .collect::<meshgnn::Result<Vec<_>>>()?;
            cli::cmd_inspect(&checkpoint, &features, &layers, sample_cap, seed, svg, &out)
        }
        Command::Evaluate {
            checkpoint,
            features,
            per_site,
            out,
        } => cli::cmd_evaluate(&checkpoint, &features, per_site, &out),
        Command::RunAll {
            spec,
            config,
            seed,
            out,
        } => {
            let mut config = load_config(&config)?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            cli::cmd_run_all(&spec, &config, &out)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
