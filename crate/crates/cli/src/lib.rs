//! Library half of the `gtsp` binary: evaluation reports, SVG rendering, and
//! the command implementations. Kept as a library so integration tests can
//! drive the same code paths the binary does.

pub mod commands;
pub mod render;
pub mod report;

/// Command failure, split by exit-code contract: usage problems exit 2,
/// runtime and I/O problems exit 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}
