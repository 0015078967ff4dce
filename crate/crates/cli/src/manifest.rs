use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    /// A retry cap was hit; the listed outputs cover the work done before it.
    Partial,
}

/// Everything needed to reproduce a run, plus what it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Command,
    /// The fully resolved configuration, defaults included.
    pub config: RunConfig,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Output file names, relative to the manifest's directory.
    pub outputs: Vec<String>,
    pub caveats: Vec<String>,
    pub status: RunStatus,
}

pub(crate) fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Parse { what: "manifest".into(), message: e.to_string() })
    }
}
