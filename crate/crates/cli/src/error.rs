use thiserror::Error;

/// CLI failure. Each variant maps to a stable error code and exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("column '{0}' not found in input header")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    UnparseableRow { line: usize, message: String },
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config_invalid",
            CliError::MissingColumn(_) => "missing_column",
            CliError::UnparseableRow { .. } => "unparseable_row",
            CliError::Data(_) => "data_invalid",
            CliError::Numerical(_) => "numerical_failure",
            CliError::Io { .. } => "io_error",
        }
    }

    /// 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::MissingColumn(_) | CliError::UnparseableRow { .. } | CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<spacrt::Error> for CliError {
    fn from(e: spacrt::Error) -> Self {
        use spacrt::Error as E;
        match e {
            E::InvalidParameter(_) => CliError::Config(e.to_string()),
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::Domain(_) | E::DimensionMismatch { .. } | E::Empty(_) | E::ZeroSupport { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
