use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

mod scenarios;

use scenarios::{Failure, Scenario};

/// Double-EIT scenarios: spectra, group velocities, propagation, storage, fits.
#[derive(Debug, Parser)]
#[command(name = "deit", version)]
struct Cli {
    scenario: Scenario,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override a config value, e.g. `--set params.exchange_g=100Hz`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for sweeps and velocity classes.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("deit: cannot size worker pool: {e}");
        }
    }
    match scenarios::run(cli.scenario, &cli.config, &cli.out, &cli.set) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("deit {}: {e}", cli.scenario.name());
            ExitCode::from(match e {
                Failure::Config(_) => 3,
                Failure::Numerical(_) => 4,
                Failure::Io(_) => 5,
            })
        }
    }
}
