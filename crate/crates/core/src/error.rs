use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("ingest failed: {0}")]
    Ingest(String),

    #[error("corpus contains no valid records ({skipped} rows rejected)")]
    EmptyCorpus { skipped: usize },

    #[error("duplicate record_id `{0}`")]
    DuplicateRecordId(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown {variable} label `{label}`")]
    Domain { variable: String, label: String },

    #[error("unknown environment `{label}`; known environments: {}", known.join(", "))]
    UnknownEnvironment { label: String, known: Vec<String> },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("oracle refused: {0}")]
    OracleRefused(String),

    #[error("unsupported model schema_version {found} (supported: {supported})")]
    UnsupportedVersion { found: i64, supported: u32 },

    #[error("model artifact parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("transport error talking to {endpoint}: {message} (retryable)")]
    Transport { endpoint: String, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn domain(variable: impl Into<String>, label: impl Into<String>) -> Self {
        Error::Domain {
            variable: variable.into(),
            label: label.into(),
        }
    }

    /// Stable machine-readable code, shared by the HTTP service and the C ABI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Ingest(_) => "ingest_error",
            Error::EmptyCorpus { .. } => "empty_corpus",
            Error::DuplicateRecordId(_) => "duplicate_record_id",
            Error::Argument(_) => "invalid_argument",
            Error::Config(_) => "configuration_error",
            Error::Domain { .. } => "unknown_label",
            Error::UnknownEnvironment { .. } => "unknown_environment",
            Error::Lookup(_) => "not_found",
            Error::Validation(_) => "validation_error",
            Error::Consistency(_) => "consistency_error",
            Error::OracleRefused(_) => "oracle_refused",
            Error::UnsupportedVersion { .. } => "unsupported_version",
            Error::Parse { .. } => "parse_error",
            Error::Transport { .. } => "transport_error",
            Error::Io { .. } => "io_error",
        }
    }
}
