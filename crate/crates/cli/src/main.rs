mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigFile, Flags, RunConfig, UsageError};

#[derive(Parser)]
#[command(name = "elqa", version, about = "Entity linking as multiple-choice question answering")]
#[command(args_override_self = true)]
struct Cli {
    #[command(flatten)]
    flags: Flags,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the ontology and mention files and print their sizes
    Ingest,
    /// Train the n-gram retriever contrastively and write --checkpoint
    TrainRetriever,
    /// Embed every ontology name and write --index
    Index,
    /// Build the solved-instance datastore from --train and write --datastore
    BuildDatastore,
    /// Link one mention, printing candidates, neighbors, prompt and scores
    Link {
        #[arg(long)]
        mention: String,
        /// Gold entity id, used only to label the trace
        #[arg(long)]
        gold: Option<String>,
    },
    /// Score one split; table on stdout, JSON to --report
    Evaluate {
        /// Report label
        #[arg(long, default_value = "run")]
        label: String,
    },
    /// Run the ablation rows (full, no-aug, no-knn, random-neighbors, generate-names)
    Ablate,
    /// Accuracy over a range of N or K as CSV
    Sweep {
        #[arg(long, value_name = "N|K")]
        param: elqa::eval::SweepParam,
        /// Comma-separated values [default: 1..=10 for N, 0..=5 for K]
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
    },
    /// Retrieval-enhanced training prompts as JSONL for a generator
    ExportPrompts,
    /// Write a synthetic benchmark (ontology and splits) into --out
    Synth {
        #[arg(long, default_value_t = elqa::synthetic::SyntheticConfig::default().seed)]
        benchmark_seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.flags.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let cfg = RunConfig::resolve(&cli.flags, &file)?;
    log::info!("elqa {}", env!("CARGO_PKG_VERSION"));
    for (key, value) in cfg.echo() {
        log::info!("config {key} = {value}");
    }
    cfg.check_inputs()?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::TrainRetriever => commands::train_retriever(&cfg),
        Command::Index => commands::index(&cfg),
        Command::BuildDatastore => commands::build_datastore(&cfg),
        Command::Link { mention, gold } => commands::link(&cfg, &mention, gold.as_deref()),
        Command::Evaluate { label } => commands::evaluate(&cfg, &label),
        Command::Ablate => commands::ablate(&cfg),
        Command::Sweep { param, values } => commands::sweep(&cfg, param, values),
        Command::ExportPrompts => commands::export_prompts(&cfg),
        Command::Synth { benchmark_seed } => commands::synth(&cfg, benchmark_seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
