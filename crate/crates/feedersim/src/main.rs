use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use feedersim::cli::{cmd_compare, cmd_run, cmd_validate, EXIT_VALIDATION};
use feedersim::coordination::ControlMethod;

/// Quasi-static feeder simulator with PV smart-inverter reactive control.
#[derive(Parser)]
#[command(name = "feedersim", version)]
struct Args {
    /// Scenario file to load.
    #[arg(long)]
    scenario: PathBuf,

    /// Control method: noctl, fc, ac-nocm, ac-fw, or ac-dw.
    /// Overrides the method set in the scenario file.
    #[arg(long)]
    method: Option<String>,

    /// Run all five control methods and write a comparison summary.
    #[arg(long, conflicts_with = "method")]
    compare: bool,

    /// Output directory for CSVs and summaries.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Statically validate the scenario without running it.
    #[arg(long)]
    validate: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();

    if args.validate {
        return ExitCode::from(cmd_validate(&args.scenario) as u8);
    }

    let method = match args.method.as_deref() {
        Some(tag) => match ControlMethod::from_tag(tag) {
            Some(m) => Some(m),
            None => {
                eprintln!("error: unknown control method `{tag}`");
                return ExitCode::from(EXIT_VALIDATION as u8);
            }
        },
        None => None,
    };

    let result = if args.compare {
        cmd_compare(&args.scenario, &args.out)
    } else {
        cmd_run(&args.scenario, method, &args.out)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
