//! Error classes that map to process exit codes.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing file: {0}")]
    Missing(String),
}

impl CliError {
    pub fn from_io(path: &Path, e: std::io::Error) -> anyhow::Error {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(path.display().to_string()).into()
        } else {
            anyhow::Error::new(e).context(path.display().to_string())
        }
    }
}

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_MISSING: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;

/// Exit code for an error: 1 for configuration problems and anything
/// unclassified, 2 for missing inputs, 3 for a non-finite training loss or a
/// diverged network.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Config(_) => EXIT_CONFIG,
                CliError::Missing(_) => EXIT_MISSING,
            };
        }
        if let Some(e) = cause.downcast_ref::<hardpix::Error>() {
            return match e {
                hardpix::Error::NonFiniteLoss { .. } | hardpix::Error::NonFiniteOutput(_) => {
                    EXIT_NON_FINITE
                }
                hardpix::Error::Io { source, .. }
                    if source.kind() == std::io::ErrorKind::NotFound =>
                {
                    EXIT_MISSING
                }
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}
