use std::fmt;

/// Command failure, classified by exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad command line or missing mandatory flag.
    Usage(String),
    /// Missing, unreadable or ill-formed input.
    Input(String),
    /// The numerics failed (non-finite loss, unidentifiable fit, domain).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn prefixed(self, stage: &str) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{stage}: {m}")),
            CliError::Input(m) => CliError::Input(format!("{stage}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{stage}: {m}")),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<regionshop::Error> for CliError {
    fn from(e: regionshop::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Input(e.to_string())
        }
    }
}

/// Attaches a stage name to core errors.
pub trait Stage<T> {
    fn stage(self, name: &str) -> Result<T, CliError>;
}

impl<T, E: Into<CliError>> Stage<T> for Result<T, E> {
    fn stage(self, name: &str) -> Result<T, CliError> {
        self.map_err(|e| e.into().prefixed(name))
    }
}
