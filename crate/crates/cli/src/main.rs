use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use freqnoon_cli::{run_scenario, Scenario};

/// Frequency-domain two-photon interference scenarios.
#[derive(Debug, Parser)]
#[command(name = "freqnoon", version)]
struct Args {
    /// Scenario to run.
    #[arg(value_enum)]
    scenario: Scenario,
    /// TOML configuration file, layered over the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset (paper-200m, mitigated-50m).
    #[arg(long)]
    preset: Option<String>,
    /// Override a configuration value, e.g. `--set bsfwm.stage1_power_w=5.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; defaults to $FREQNOON_OUT, then `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run_scenario(
        args.scenario,
        args.preset.as_deref(),
        args.config.as_deref(),
        &args.overrides,
        args.out.as_deref(),
    ) {
        Ok(report) => {
            print!("{}", report.table());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
