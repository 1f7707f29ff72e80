mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Token-level ensembling of next-token generators.
#[derive(Parser, Debug)]
#[command(name = "gac", version, about)]
struct Cli {
    /// Overrides the config's sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the union of vocabulary files and report its size.
    Union {
        #[arg(required = true)]
        vocabs: Vec<PathBuf>,
        /// Write the union vocabulary to this file.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Generate a continuation of a prompt with the configured ensemble.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompt: String,
        /// Write one JSON record per step here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Include per-step wall time in the trace.
        #[arg(long)]
        trace_timing: bool,
        /// Also print the per-step trace table to stderr.
        #[arg(long)]
        show_steps: bool,
    },
    /// Run a task file and report accuracy and latency.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tasks: PathBuf,
        /// Write the full report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Warm-up tokens per member (overrides the config).
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Rate at which two vocabularies tokenize words identically.
    Agreement {
        vocab_a: PathBuf,
        vocab_b: PathBuf,
        /// One word per line.
        words: PathBuf,
    },
    /// Expected calibration error of (confidence, correct) records.
    Ece {
        /// JSON lines: {"confidence": 0.8, "correct": true}
        records: PathBuf,
        #[arg(long, default_value_t = gac_core::calibration::DEFAULT_BINS)]
        bins: usize,
    },
    /// Serve one configured member over the step protocol.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Address to bind, e.g. 127.0.0.1:7070.
        #[arg(long)]
        serve: String,
        /// Member to serve, by name or position (default: the first).
        #[arg(long)]
        member: Option<String>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let seed = cli.seed;
    let outcome = match cli.command {
        Command::Union { vocabs, dump } => commands::union(&vocabs, dump.as_deref()),
        Command::Generate {
            config,
            prompt,
            trace,
            trace_timing,
            show_steps,
        } => commands::generate(&config, &prompt, trace.as_deref(), trace_timing, show_steps, seed),
        Command::Bench {
            config,
            tasks,
            report,
            warmup,
        } => commands::bench(&config, &tasks, report.as_deref(), warmup, seed),
        Command::Agreement {
            vocab_a,
            vocab_b,
            words,
        } => commands::agreement(&vocab_a, &vocab_b, &words),
        Command::Ece { records, bins } => commands::ece(&records, bins),
        Command::Serve {
            config,
            serve,
            member,
            workers,
        } => commands::serve(&config, &serve, member.as_deref(), workers),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gac: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
