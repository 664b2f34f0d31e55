use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, RunOptions};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "ccc", version, about = "Condensation and selective replay for continual learning on dynamic graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// JSON config with `bench`, `condense`, `model`, `replay` and `run` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set replay.k_hops=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic snapshot stream.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "stream")]
        out: PathBuf,
    },
    /// Run the experiment arms over a stream and write results.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "stream")]
        stream: PathBuf,
        /// Comma-separated subset of ccc, finetune, full_replay.
        #[arg(long)]
        arms: Option<String>,
        /// Parent directory of the run directory; overrides `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write combined embeddings per task and arm.
        #[arg(long)]
        dump_embeddings: bool,
    },
    /// Condense one snapshot file.
    Condense {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value = "condensed.json")]
        out: PathBuf,
    },
    /// Finite-difference check of every hand-written gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        /// Also write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Perturb analytic gradients by this amount (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<f64>,
    },
    /// Recompute metrics from a predictions file.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate { config, out: dir } => {
            commands::cmd_generate(config.config.as_deref(), &config.overrides, &dir, out)?;
        }
        Command::Run {
            config,
            stream,
            arms,
            out: output_dir,
            dump_embeddings,
        } => {
            let opts = RunOptions {
                config: config.config,
                overrides: config.overrides,
                stream_dir: stream,
                arms,
                output_dir,
                dump_embeddings,
            };
            commands::cmd_run(&opts, out)?;
        }
        Command::Condense {
            config,
            snapshot,
            out: output,
        } => {
            commands::cmd_condense(&snapshot, config.config.as_deref(), &config.overrides, &output, out)?;
        }
        Command::Gradcheck {
            seed,
            instances,
            report,
            inject_fault,
        } => {
            commands::cmd_gradcheck(seed, instances, inject_fault, report.as_deref(), out)?;
        }
        Command::Eval { predictions, out: output } => {
            commands::cmd_eval(&predictions, output.as_deref(), out)?;
        }
    }
    Ok(())
}
