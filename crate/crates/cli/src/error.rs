use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema violation at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error(transparent)]
    Math(#[from] randcvx::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("check suite failed on {0} instance(s)")]
    SuiteFailed(usize),
}

impl CliError {
    pub fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for malformed input, 3 for a failed mathematical precondition, 4 for
    /// a certificate that should have held, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        use randcvx::Error as E;
        match self {
            CliError::Schema { .. } => 2,
            CliError::Math(e) => match e {
                E::Shape(_) | E::Partition(_) | E::Invalid(_) => 2,
                E::Certificate(_) => 4,
                E::Unsupported(_)
                | E::NeedsGrid(_)
                | E::OutsideDomain { .. }
                | E::Precondition { .. }
                | E::Improper(_)
                | E::NotConvex(_)
                | E::Convergence(_) => 3,
            },
            CliError::Io { .. } | CliError::SuiteFailed(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
