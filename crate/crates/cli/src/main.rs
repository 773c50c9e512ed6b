use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use texweave_cli::{EvalArgs, ExpandArgs, ExportArgs, ReconstructArgs, RunConfig, TrainArgs};

#[derive(Parser)]
#[command(
    name = "texweave",
    version,
    about = "Neighbour-tile texture synthesis with recurrent VAEs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter-bank utilities.
    Filterbank {
        #[command(subcommand)]
        command: FilterbankCommand,
    },
    /// Train direction models on texture tiles.
    Train(TrainArgs),
    /// Reconstruct neighbour tiles with a trained model.
    Reconstruct(ReconstructArgs),
    /// Grow a center tile into a larger texture with four direction models.
    Expand(ExpandArgs),
    /// Distances between an original texture and generated images.
    Eval(EvalArgs),
    /// Replay a recorded run.json.
    Rerun {
        config: PathBuf,
        /// Write to this directory instead of the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FilterbankCommand {
    /// Write every kernel as a grayscale PNG plus a JSON manifest.
    Export(ExportArgs),
}

fn run(cli: Cli) -> texweave_cli::CliResult<()> {
    let config = match cli.command {
        Command::Filterbank {
            command: FilterbankCommand::Export(a),
        } => RunConfig::FilterbankExport(a),
        Command::Train(a) => RunConfig::Train(a),
        Command::Reconstruct(a) => RunConfig::Reconstruct(a),
        Command::Expand(a) => RunConfig::Expand(a),
        Command::Eval(a) => RunConfig::Eval(a),
        Command::Rerun { config, out } => {
            let mut c = RunConfig::load(&config)?;
            if let Some(out) = out {
                c.set_out_dir(out);
            }
            c
        }
    };
    config.execute()
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
