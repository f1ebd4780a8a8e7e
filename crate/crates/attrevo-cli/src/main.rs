use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use attrevo::SamplingBias;
use attrevo_cli::commands;
use attrevo_cli::config::{Overrides, RunConfig};

/// Evolutionary discovery of attribute-based image classifiers.
#[derive(Parser)]
#[command(name = "attrevo", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Override engine.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override engine.max_iterations.
    #[arg(long)]
    iterations: Option<u64>,
    /// Override engine.prompt_length: past sets shown per mutation prompt.
    #[arg(long, value_name = "K")]
    prompt_length: Option<usize>,
    /// Override engine.sampling_bias.
    #[arg(long, value_enum)]
    bias: Option<BiasArg>,
    /// Override backend templates; repeat for several.
    #[arg(long, value_name = "TEMPLATE")]
    templates: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BiasArg {
    /// Favor low-loss classifiers when sampling the bank.
    Best,
    /// Favor high-loss classifiers instead.
    Worst,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            iterations: self.iterations,
            prompt_length: self.prompt_length,
            bias: self.bias.map(|b| match b {
                BiasArg::Best => SamplingBias::Best,
                BiasArg::Worst => SamplingBias::Worst,
            }),
            templates: if self.templates.is_empty() {
                None
            } else {
                Some(self.templates.clone())
            },
        }
    }

    fn load(&self) -> anyhow::Result<RunConfig> {
        RunConfig::load(&self.config, &self.overrides())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build the synthetic oracle world and its embedding stores.
    MakeOracle {
        #[command(flatten)]
        common: Common,
        /// Override oracle.classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Override oracle.train_per_class and oracle.test_per_class.
        #[arg(long)]
        images: Option<usize>,
    },
    /// Warm the embedding cache over the attribute pool.
    EmbedDataset {
        #[command(flatten)]
        common: Common,
    },
    /// Per-class one-vs-all attribute search; writes trajectories.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Joint evolutionary training with periodic checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the latest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Accuracy and margin of a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint file; defaults to the run's final checkpoint.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Split to score: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Attribute audit and confusion matrix for a checkpoint.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Regenerate the generic attribute pool via the completion backend.
    RegenPool {
        #[command(flatten)]
        common: Common,
        /// Phrases to collect.
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Output file; defaults to pool.txt in the run directory.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    match cli.command {
        Command::MakeOracle {
            common,
            classes,
            images,
        } => {
            let mut config = common.load()?;
            if let Some(c) = classes {
                config.oracle.classes = c;
            }
            if let Some(n) = images {
                config.oracle.train_per_class = n;
                config.oracle.test_per_class = n;
            }
            if let Some(seed) = common.seed {
                config.oracle.seed = seed;
            }
            commands::make_oracle(&config)
        }
        Command::EmbedDataset { common } => commands::embed_dataset(&common.load()?),
        Command::Pretrain { common } => commands::pretrain(&common.load()?),
        Command::Train { common, resume } => commands::train(&common.load()?, resume),
        Command::Eval {
            common,
            checkpoint,
            split,
        } => commands::eval(&common.load()?, checkpoint.as_deref(), &split),
        Command::Report {
            common,
            checkpoint,
            split,
        } => commands::report(&common.load()?, checkpoint.as_deref(), &split),
        Command::RegenPool { common, count, out } => {
            commands::regen_pool(&common.load()?, count, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            let chain: Vec<String> = err.chain().map(|c| c.to_string()).collect();
            let payload = serde_json::json!({
                "error": chain.first().cloned().unwrap_or_default(),
                "chain": chain,
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
