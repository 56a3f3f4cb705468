//! Benchmark harness behind the `mvi` binary.

use std::io::Write;
use std::path::Path;

use mvi::trace::IterationTrace;

pub mod commands;
pub mod config;

/// Commit the binary was built from, or `unknown` outside a checkout.
pub const BUILD_ID: &str = env!("MVI_BUILD_ID");

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("solver diverged at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        partial_trace: Vec<IterationTrace>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solver(mvi::Error),
}

impl From<mvi::Error> for CliError {
    fn from(e: mvi::Error) -> Self {
        use mvi::Error as E;
        match e {
            E::Divergence {
                iteration,
                reason,
                partial_trace,
            } => Self::Divergence {
                iteration,
                reason,
                partial_trace,
            },
            E::InvalidParameter(_)
            | E::DimensionMismatch { .. }
            | E::EmptySet(_)
            | E::MissingHints(_)
            | E::NegativeMultiplier { .. } => Self::Config(e.to_string()),
            other => Self::Solver(other),
        }
    }
}

impl CliError {
    /// A config error about the instance, without the library's error prefix.
    pub fn instance(e: mvi::Error) -> Self {
        match e {
            mvi::Error::InvalidParameter(m) => Self::Config(format!("instance: {m}")),
            other => Self::Config(format!("instance: {other}")),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::Divergence { .. } => EXIT_DIVERGED,
            _ => EXIT_FAILURE,
        }
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
