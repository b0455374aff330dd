use std::path::PathBuf;

/// Failure of a command, grouped into categories that map to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error("model: {0}")]
    Model(String),

    #[error("non-finite loss at epoch {epoch}, step {step} (batch {}); diagnostics in {}", ids.join(", "), dump.display())]
    NonFinite {
        epoch: usize,
        step: usize,
        ids: Vec<String>,
        dump: PathBuf,
    },

    #[error("checkpoint {}: {reason}", path.display())]
    Checkpoint { path: PathBuf, reason: String },

    #[error("i/o on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CliError::Checkpoint {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
            CliError::NonFinite { .. } => 5,
            CliError::Checkpoint { .. } => 6,
            CliError::Io { .. } => 7,
        }
    }
}

impl From<panet::Error> for CliError {
    fn from(e: panet::Error) -> Self {
        use panet::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Shape(_) | E::WeightLoad { .. } => CliError::Model(e.to_string()),
            E::Io { path, source } => CliError::Io { path, source },
            E::Validation(_) | E::Manifest { .. } | E::Image { .. } | E::Nifti { .. } => CliError::Data(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
