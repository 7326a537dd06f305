use std::path::PathBuf;
use std::process::ExitCode;

use artran_cli::commands::{self, EvalArgs, GenArgs, GradcheckArgs, SweepArgs, TrainArgs};
use artran_cli::server::{serve, AppState};
use artran_cli::{load_model, load_volumes};
use artran_core::screen::DEFAULT_CENTER_FRAMES;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "artran", version, about = "Adjustable-criterion myopia screening on synthetic OCT frames")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen(GenArgs),
    /// Train on the train split and write a checkpoint.
    Train(TrainArgs),
    /// Finite-difference check of every parameter group.
    Gradcheck(GradcheckArgs),
    /// Precision, recall and accuracy at one δ.
    Eval(EvalArgs),
    /// Precision, recall and accuracy over a δ grid.
    Sweep(SweepArgs),
    /// Serve the JSON screening API.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Centre frames per volume; even values are rounded down to odd.
        #[arg(long, default_value_t = DEFAULT_CENTER_FRAMES)]
        frames: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Gen(a) => println!("{}", commands::gen(&a)?),
        Command::Train(a) => println!("{}", commands::train(&a)?),
        Command::Gradcheck(a) => {
            let (report, ok) = commands::gradcheck(&a)?;
            print!("{report}");
            return Ok(ok);
        }
        Command::Eval(a) => print!("{}", commands::eval(&a)?),
        Command::Sweep(a) => print!("{}", commands::sweep(&a)?),
        Command::Serve {
            ckpt,
            data,
            port,
            frames,
        } => {
            if frames % 2 == 0 {
                eprintln!("--frames {frames} is even; using {}", frames.saturating_sub(1).max(1));
            }
            let state = AppState::new(load_model(&ckpt)?, load_volumes(&data, None)?, frames);
            tokio::runtime::Runtime::new()?.block_on(serve(state, port))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
