//! `tabglm` command-line interface.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::manifest::RunManifest;
use crate::settings::{ModeRequest, RunArgs, Settings, DEFAULT_SEEDS};

#[derive(Debug, Parser)]
#[command(
    name = "tabglm",
    version,
    about = "Graph and text consistency training for tabular data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Rerun {
    /// Re-execute a run from its manifest; only --out may be combined.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the inferred table schema as JSON.
    Schema {
        /// CSV file (alternative to --data).
        input: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the serialized text corpus as JSON lines.
    Serialize(RunArgs),
    /// Build or validate row embeddings and write them as TGEM.
    Embed(RunArgs),
    /// Print the column graph fitted on the training split.
    GraphSpec(RunArgs),
    /// Train one seed and print its metrics.
    Train(Rerun),
    /// Score a trained run directory.
    Eval {
        /// Run directory written by train or ablate.
        #[arg(long)]
        run: PathBuf,
        /// Score every row of this CSV instead of the run's test split.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one seed with the mode forced to full, graph or text.
    Ablate(Rerun),
    /// Run finite-difference gradient checks.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seed: u64,
    },
    /// Train every seed in --seeds (default 5,108,180,234,250) and report
    /// mean and std.
    Seeds(Rerun),
}

fn rerun_settings(r: &Rerun, expected: &str) -> Result<Settings> {
    let Some(path) = &r.manifest else {
        return if expected == "seeds" {
            Settings::resolve_with_seeds(&r.run, &DEFAULT_SEEDS)
        } else {
            Settings::resolve(&r.run)
        };
    };
    let manifest = RunManifest::read(path)?;
    if manifest.command != expected {
        bail!(
            "manifest was written by `{}`, not `{expected}`",
            manifest.command
        );
    }
    let mut settings = manifest.settings;
    if let Some(out) = &r.run.out {
        settings.out = Some(out.clone());
    }
    Ok(settings)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Schema { input, run } => {
            let path = input
                .or(run.data.clone())
                .ok_or_else(|| anyhow!("a CSV path or --data is required"))?;
            let settings = Settings::resolve(&RunArgs {
                data: Some(path),
                ..run
            })?;
            commands::schema(settings.data()?, settings.label()?)
        }
        Command::Serialize(a) => commands::serialize(&Settings::resolve(&a)?),
        Command::Embed(a) => commands::embed(&Settings::resolve(&a)?),
        Command::GraphSpec(a) => commands::graph_spec(&Settings::resolve(&a)?),
        Command::Train(r) => commands::train("train", &rerun_settings(&r, "train")?),
        Command::Eval { run, data } => commands::eval(&run, data.as_deref()),
        Command::Ablate(r) => {
            let settings = rerun_settings(&r, "ablate")?;
            if settings.mode == ModeRequest::Auto {
                bail!("ablate requires --mode full, graph or text");
            }
            commands::train("ablate", &settings)
        }
        Command::Gradcheck { seed } => commands::gradcheck(seed),
        Command::Seeds(r) => commands::seeds(&rerun_settings(&r, "seeds")?),
    }
}

/// A closed stdout (`tabglm ... | head`) ends output quietly.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || c.downcast_ref::<serde_json::Error>()
                .is_some_and(|j| j.io_error_kind() == Some(std::io::ErrorKind::BrokenPipe))
    })
}

/// Library errors keep their own code; anything else raised here is an
/// I/O, JSON or argument problem.
fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(lib) = e.chain().find_map(|c| c.downcast_ref::<tabglm::Error>()) {
        return lib.kind();
    }
    if e.chain().any(|c| c.is::<std::io::Error>()) {
        "io"
    } else if e.chain().any(|c| c.is::<serde_json::Error>()) {
        "json"
    } else {
        "invalid_input"
    }
}

/// One JSON object on one stderr line.
fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let filter = std::env::var("TABGLM_LOG").unwrap_or_else(|_| "info".into());
    env_logger::Builder::new()
        .parse_filters(&filter)
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), &format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
