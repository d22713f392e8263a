//! Command line front end: ingest data, train, evaluate retrieval precision,
//! query single images, and plot training curves. Every command writes its
//! artifacts plus a JSON manifest into the target directory.

mod commands;
mod manifest;
mod svg;

use clap::{Parser, Subcommand};
use jtanet::error::Error;

#[derive(Parser)]
#[command(name = "jtanet", version, about = "Joint autoencoder/Siamese patch retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a patch container from source images or a synthetic generator.
    Ingest(commands::IngestArgs),
    /// Train a model on an ingested patch container.
    Train(commands::TrainArgs),
    /// Build the feature database and score retrieval precision.
    Eval(commands::EvalArgs),
    /// Retrieve the nearest database patches for one query image.
    Query(commands::QueryArgs),
    /// Render the training-log loss curves as SVG.
    Plot(commands::PlotArgs),
}

/// Exit codes: 2 for validation problems (clap uses the same), 3 for I/O and
/// file-format problems, 4 for numeric failures.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 2,
        Error::NonFinite(_) => 4,
        Error::Format { .. } | Error::Io(_) | Error::Json(_) | Error::Image(_) => 3,
    }
}

fn init_threads() {
    if let Ok(v) = std::env::var("JTANET_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring JTANET_THREADS={v:?} (want a positive integer)"),
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Ingest(args) => commands::ingest(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Query(args) => commands::query(args),
        Command::Plot(args) => commands::plot(args),
    }
}

fn main() {
    let cli = Cli::parse();
    init_threads();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
