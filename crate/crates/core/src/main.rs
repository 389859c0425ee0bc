use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use buglistener::brs_model::ReportFormat;
use buglistener::config::PipelineConfig;
use buglistener::pipeline::{self, DisentangleOptions};
use buglistener::Result;

#[derive(Parser)]
#[command(name = "buglistener", version, about = "Find bug reports in developer chat logs")]
struct Cli {
    /// TOML configuration file. `BUGLISTENER_*` variables override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and normalize chat exports (JSON lines) into the corpus.
    Ingest {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Project name; the file stem by default.
        #[arg(long)]
        project: Option<String>,
    },
    /// Split the corpus into dialogs.
    Disentangle {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Directory of `<project>.jsonl` gold reply links.
        #[arg(long)]
        gold_links: Option<PathBuf>,
        /// Trained link-model checkpoint directory.
        #[arg(long, conflicts_with = "train_links")]
        link_model: Option<PathBuf>,
        /// Train a link model on the gold links in this directory first.
        #[arg(long)]
        train_links: Option<PathBuf>,
        /// Dialog labels (JSON lines with dialog_id and label).
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Cross-project evaluation and a final dialog classifier.
    TrainBri {
        #[arg(long)]
        dialogs: Option<PathBuf>,
    },
    /// Flag bug-report dialogs.
    PredictBri {
        #[arg(long)]
        dialogs: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fine-tune the sentence classifier in two stages.
    TrainBrs {
        #[arg(long)]
        external: Option<PathBuf>,
        #[arg(long)]
        sentences: Option<PathBuf>,
    },
    /// Write one bug report per flagged dialog.
    Synthesize {
        #[arg(long)]
        dialogs: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<ReportFormat>,
    },
    /// Score predictions against gold dialog labels.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        dialogs: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?.with_overrides(cli.seed, cli.out);
    match cli.command {
        Command::Ingest { inputs, project } => emit(&pipeline::cmd_ingest(&cfg, &inputs, project.as_deref())?),
        Command::Disentangle {
            corpus,
            gold_links,
            link_model,
            train_links,
            labels,
        } => {
            let opts = DisentangleOptions {
                corpus,
                gold_links,
                link_model,
                train_links,
                labels,
            };
            emit(&pipeline::cmd_disentangle(&cfg, &opts)?)
        }
        Command::TrainBri { dialogs } => emit(&pipeline::cmd_train_bri(&cfg, dialogs.as_deref())?),
        Command::PredictBri { dialogs, checkpoint } => {
            emit(&pipeline::cmd_predict_bri(&cfg, dialogs.as_deref(), checkpoint.as_deref())?)
        }
        Command::TrainBrs { external, sentences } => {
            emit(&pipeline::cmd_train_brs(&cfg, external.as_deref(), sentences.as_deref())?)
        }
        Command::Synthesize {
            dialogs,
            checkpoint,
            format,
        } => emit(&pipeline::cmd_synthesize(&cfg, dialogs.as_deref(), checkpoint.as_deref(), format)?),
        Command::Eval { predictions, dialogs } => {
            emit(&pipeline::cmd_eval(&cfg, predictions.as_deref(), dialogs.as_deref())?)
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("BUGLISTENER_LOG").unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": e.exit_code(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
