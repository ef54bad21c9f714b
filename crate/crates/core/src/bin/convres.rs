use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use convres::config::PipelineConfig;
use convres::pipeline;
use convres::{Error, Result};

/// Conversational passage retrieval with term-classification query resolution.
#[derive(Parser)]
#[command(name = "convres", version)]
struct Cli {
    /// Key-value configuration file (`key = value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write labeled training examples for `topics` as JSONL.
    Label {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the passage index from `corpus` into `index`.
    Index,
    /// Train the term classifier and write it to `model`.
    Train,
    /// Resolve every turn of `topics` into a weighted query.
    Resolve {
        #[arg(long)]
        out: PathBuf,
        /// Per-term scores (classifier variant only).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Query-likelihood retrieval.
    Search {
        /// Resolved queries; resolved on the fly when absent.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rerank a run by term overlap.
    Rerank {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reciprocal rank fusion; the first run fixes the candidate set.
    Fuse {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score runs against `qrels`; writes `<out>.json` and `<out>.txt`.
    Eval {
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        /// Also score query expansions against gold resolution terms.
        #[arg(long)]
        queries: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage end to end into `output`.
    Pipeline,
    /// Write the bundled toy collection and a config for it.
    ToyData { dir: PathBuf },
    /// Print the resolved configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    config.apply_overrides(cli.overrides.iter().map(String::as_str))?;
    config.validate()?;
    Ok(config)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    if let Command::ToyData { dir } = &cli.command {
        let conf = pipeline::export_toy(dir)?;
        println!("{}", conf.display());
        return Ok(());
    }
    let config = load_config(cli)?;
    match &cli.command {
        Command::Label { out } => print_json(&pipeline::cmd_label(&config, out)?),
        Command::Index => print_json(&pipeline::cmd_index(&config)?),
        Command::Train => print_json(&pipeline::cmd_train(&config)?),
        Command::Resolve { out, predictions } => {
            let records = pipeline::cmd_resolve(&config, out, predictions.as_deref())?;
            log::info!("resolved {} queries", records.len());
            Ok(())
        }
        Command::Search { queries, out } => {
            let run = pipeline::cmd_search(&config, queries.as_deref(), out)?;
            log::info!("retrieved for {} queries", run.len());
            Ok(())
        }
        Command::Rerank { run, queries, out } => {
            pipeline::cmd_rerank(&config, run, queries.as_deref(), out)?;
            Ok(())
        }
        Command::Fuse { runs, out } => {
            pipeline::cmd_fuse(&config, runs, out)?;
            Ok(())
        }
        Command::Eval { runs, queries, out } => {
            let eval = pipeline::cmd_eval(&config, runs, queries.as_deref(), out)?;
            for (name, rep) in &eval.runs {
                println!("{name}: NDCG@{} {:.4}  R@{} {:.4}", config.ranking.ndcg_cut, rep.mean.ndcg, config.ranking.cut, rep.mean.recall);
            }
            Ok(())
        }
        Command::Pipeline => print_json(&pipeline::run_pipeline(&config)?),
        Command::ShowConfig => {
            print!("{}", config.to_text());
            Ok(())
        }
        Command::ToyData { .. } => unreachable!(),
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_input_error() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
