use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },

    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },

    #[error("invalid `{key}`: {reason}")]
    Value { key: String, reason: String },

    #[error(transparent)]
    Core(#[from] dropgraph::Error),

    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },

    #[error("{count} of {total} runs diverged")]
    Diverged { count: usize, total: usize },

    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

impl CliError {
    /// 2 for anything wrong with the input, 3 for divergence, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Syntax { .. } | CliError::Value { .. } => 2,
            CliError::Core(dropgraph::Error::Config { .. }) => 2,
            CliError::Diverged { .. } => 3,
            _ => 1,
        }
    }
}
