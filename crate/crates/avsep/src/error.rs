use thiserror::Error;

/// Library-wide error type.
#[derive(Error, Debug)]
pub enum AvsepError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("sample rate mismatch: expected {expected} Hz, got {got} Hz")]
    SampleRate { expected: u32, got: u32 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("window/hop combination is not invertible by overlap-add: {0}")]
    NonInvertibleFraming(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("unknown parameter group for {0}")]
    UnknownParameterGroup(String),

    #[error("missing files: {0:?}")]
    MissingFiles(Vec<String>),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {message}")]
    Wav { path: String, message: String },
}

impl AvsepError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        AvsepError::Io {
            path: path.into(),
            source,
        }
    }
}
