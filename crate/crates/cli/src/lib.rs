//! Configuration, scenarios and artifact emission for the `freqnoon` binary.

pub mod config;
pub mod error;
pub mod output;
pub mod scenarios;

use std::path::{Path, PathBuf};

pub use config::{load, ScenarioConfig};
pub use error::CliError;
pub use scenarios::{Report, Scenario, Session};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FREQNOON_OUT";

/// Loads the configuration, runs one scenario and writes its artifacts.
pub fn run_scenario(
    scenario: Scenario,
    preset: Option<&str>,
    config_file: Option<&Path>,
    overrides: &[String],
    out: Option<&Path>,
) -> Result<Report, CliError> {
    let (config, provenance) = load(preset, config_file, overrides)?;
    let env = std::env::var(OUT_DIR_ENV).ok();
    let dir: PathBuf = scenarios::resolve_out_dir(out, env.as_deref(), &config);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    Session::new(config, provenance, dir).run(scenario)
}
