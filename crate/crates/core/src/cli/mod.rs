//! Config-driven experiment runs, scaling reports and the oracle self-test.

pub mod config;
pub mod experiments;
pub mod output;

use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::scaling::ExperimentRecord;
use config::load_config;
use output::{now, write_outputs, RunManifest};

/// Failure of a CLI command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad config or input files; nothing was written.
    Validation(Error),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "validation failed: {e}"),
            CliError::Runtime(e) => write!(f, "run failed: {e}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Validation(e) | CliError::Runtime(e) => Some(e),
        }
    }
}

pub const DEFAULT_OUT: &str = "bitscale-out";

/// Validate the config, run the experiment and write outputs plus the
/// manifest. `out` overrides the config's `output_dir`.
pub fn run(config_path: &Path, out: Option<&Path>) -> Result<(PathBuf, RunManifest), CliError> {
    let started = now();
    let (cfg, bytes) = load_config(config_path).map_err(CliError::Validation)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT).join(cfg.experiment.kind()));
    log::info!("running {} (seed {}) into {}", cfg.experiment.kind(), cfg.seed, dir.display());
    let artifacts = experiments::execute(&cfg).map_err(CliError::Runtime)?;
    let manifest =
        write_outputs(&dir, cfg.experiment.kind(), &bytes, started, artifacts).map_err(CliError::Runtime)?;
    Ok((dir, manifest))
}

/// Read records from JSONL files; blank lines are skipped.
pub fn read_records(paths: &[PathBuf]) -> Result<(Vec<ExperimentRecord>, Vec<u8>), Error> {
    let mut records = Vec::new();
    let mut all = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)?;
        all.extend_from_slice(text.as_bytes());
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ExperimentRecord = serde_json::from_str(line).map_err(|e| Error::InvalidConfig {
                field: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })?;
            r.validate().map_err(|e| Error::InvalidConfig {
                field: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })?;
            records.push(r);
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok((records, all))
}

/// Merge record files and write the scaling report with a manifest.
pub fn report(paths: &[PathBuf], out: &Path) -> Result<RunManifest, CliError> {
    let started = now();
    let (records, bytes) = read_records(paths).map_err(CliError::Validation)?;
    let artifacts = experiments::scaling_artifacts(records).map_err(CliError::Runtime)?;
    write_outputs(out, "report", &bytes, started, artifacts).map_err(CliError::Runtime)
}
