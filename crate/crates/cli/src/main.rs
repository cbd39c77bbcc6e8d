use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use enn_cli::commands::{self, Loaded};
use enn_cli::config::{DatasetSpec, DATASETS, EVALUATIONS};
use enn_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "enn", version, about = "Train and analyse essence neural networks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset and write it to disk.
    GenData {
        /// Dataset name; taken from --config when omitted.
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and run the evaluations listed in its config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one evaluation on a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        evaluation: String,
        /// Defaults to the config saved next to the model.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// FGSM attack on --model with perturbations designed on --designer.
    Attack {
        #[arg(long)]
        model: PathBuf,
        /// Defaults to --model (a self-attack).
        #[arg(long)]
        designer: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Silence neurons one at a time and record per-class accuracy.
    Lesion {
        #[arg(long)]
        model: PathBuf,
        /// Layer index; the first hidden layer by default.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate the CSV files of a run directory into report.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train over increasing training-set sizes and record errors and sizes.
    Scaling {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn model_config(model: &Path, config: Option<PathBuf>, seed: Option<u64>) -> Result<Loaded> {
    let path = config.unwrap_or_else(|| commands::sibling_config(model));
    Loaded::from_path(&path, seed)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::GenData {
            dataset,
            config,
            seed,
            out,
        } => {
            let (spec, seed) = match (dataset, config) {
                (Some(name), None) => {
                    if !DATASETS.contains(&name.as_str()) {
                        return Err(CliError::unknown("dataset", &name, DATASETS));
                    }
                    (
                        DatasetSpec {
                            name,
                            ..Default::default()
                        },
                        seed.unwrap_or(0),
                    )
                }
                (None, Some(path)) => {
                    let l = Loaded::from_path(&path, seed)?;
                    let s = l.config.dataset.seed.unwrap_or(l.seed);
                    (l.config.dataset, s)
                }
                _ => return Err(CliError::Usage("give exactly one of --dataset and --config".into())),
            };
            commands::gen_data(&spec, seed, &out)
        }
        Command::Train { config, seed, out } => {
            commands::train(&Loaded::from_path(&config, seed)?, &out).map(|_| ())
        }
        Command::Eval {
            model,
            evaluation,
            config,
            seed,
            out,
        } => {
            if !EVALUATIONS.contains(&evaluation.as_str()) {
                return Err(CliError::unknown("evaluation", &evaluation, EVALUATIONS));
            }
            let loaded = model_config(&model, config, seed)?;
            commands::eval(&model, &evaluation, &loaded, &out).map(|_| ())
        }
        Command::Attack {
            model,
            designer,
            config,
            seed,
            out,
        } => {
            let loaded = model_config(&model, config, seed)?;
            let designer = designer.unwrap_or_else(|| model.clone());
            commands::attack(&model, &designer, &loaded, &out).map(|_| ())
        }
        Command::Lesion {
            model,
            layer,
            config,
            seed,
            out,
        } => {
            let loaded = model_config(&model, config, seed)?;
            commands::lesion(&model, layer, &loaded, &out).map(|_| ())
        }
        Command::Report { out } => commands::report(&out).map(|_| ()),
        Command::Scaling { config, seed, out } => {
            commands::scaling(&Loaded::from_path(&config, seed)?, &out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
