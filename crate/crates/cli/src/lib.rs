//! Batch front end for the `contact-shape` toolkit: configuration, command dispatch,
//! run manifests and result files.

pub mod config;
pub mod emit;
pub mod error;
pub mod manifest;
pub mod run;

pub use config::{resolve, Command, Format, MuMethod, Overrides, RunConfig, WindowRadius};
pub use error::{CliError, CliResult};
pub use manifest::{RunManifest, RunStatus, MANIFEST_FILE};
pub use run::{execute, rerun, run, Artifact, Outputs};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "CONTACT_SHAPE_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`], when set.
pub fn init_threads() -> CliResult<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Schema(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Schema(format!("cannot size thread pool: {e}")))?;
    Ok(Some(n))
}
