use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("hypothesis failure: {0}")]
    Hypothesis(String),

    #[error("numerical failure: {0}")]
    Numerical(beta_transport::Error),

    #[error("statistical failure: {0}")]
    Statistical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Statistical(_) => 5,
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<beta_transport::Error> for CliError {
    fn from(e: beta_transport::Error) -> Self {
        use beta_transport::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Json(j) => CliError::Config(j.to_string()),
            E::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            e if e.is_hypothesis_failure() => CliError::Hypothesis(e.to_string()),
            e => CliError::Numerical(e),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
