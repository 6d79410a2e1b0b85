use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gaussdiff::experiments;

#[derive(Parser)]
#[command(name = "gaussdiff", version, about = "Exact W2 evaluation of diffusion posterior samplers under Gaussian priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write curves.csv, summary.json and images.
    Run { config: PathBuf },
    /// Check a config file and list every problem found.
    Validate { config: PathBuf },
    /// Print the version.
    Version,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Version => {
            println!("gaussdiff {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
        Command::Validate { config } => experiments::validate_config(&config).map(|c| {
            println!("{}: valid {} experiment, {} model(s)", config.display(), c.kind.as_str(), c.models.len());
        }),
        Command::Run { config } => experiments::validate_config(&config).and_then(|c| {
            let summary = experiments::run_experiment(&c)?;
            let out = c.resolved_output_dir();
            for m in &summary.models {
                println!("{:<16} W2(t=0) = {:.6e}  perp = {:.6e}", m.model, m.terminal.w_total, m.terminal.w_perp);
            }
            println!("wrote {}", out.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
