use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error at `{path}` (line {line}, column {column}): {message}")]
    Config {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown sweep axis `{0}`")]
    UnknownAxis(String),
    #[error("codec file: {0}")]
    CodecFile(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] gencomm_core::Error),
    #[error("trial {trial} at {csnr_db} dB: {source}")]
    Trial {
        trial: u64,
        csnr_db: f64,
        #[source]
        source: gencomm_core::Error,
    },
    #[error("{0}")]
    CheckFailed(String),
}

impl HarnessError {
    /// Stable identifier used in the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } => "config",
            HarnessError::Invalid(_) => "invalid_scenario",
            HarnessError::UnknownAxis(_) => "unknown_axis",
            HarnessError::CodecFile(_) => "codec_file",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv(_) => "csv",
            HarnessError::Json(_) => "json",
            HarnessError::Core(_) => "core",
            HarnessError::Trial { .. } => "trial",
            HarnessError::CheckFailed(_) => "check_failed",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
