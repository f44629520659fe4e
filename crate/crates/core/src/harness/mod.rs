//! Command layer behind `raml-lab`: configuration, verification suites and
//! file outputs.

pub mod commands;
pub mod config;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use commands::{cmd_edit_hist, cmd_payoff, cmd_train, cmd_verify, Outcome};
pub use config::{ConfigFile, EditHistArgs, PayoffArgs, TrainArgs, VerifyArgs};

/// Version stamped on every JSONL record.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Failed(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] crate::Error),
}

impl HarnessError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        HarnessError::Config(msg.to_string())
    }

    /// Process exit status: 2 for usage or config problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type HarnessResult<T> = std::result::Result<T, HarnessError>;

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> HarnessResult<()> {
    let io = |source| HarnessError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io)
}
