use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{key}` for command `{command}`")]
    UnknownKey { key: String, command: String },
    #[error("key `{key}`: {msg}")]
    BadValue { key: String, msg: String },
    #[error("malformed report: {0}")]
    Report(String),
    #[error("{0}")]
    Module(propchaos::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Syntax { .. } | CliError::UnknownKey { .. } | CliError::BadValue { .. } | CliError::Report(_) => 2,
            CliError::Module(propchaos::Error::Io(_)) | CliError::Io { .. } => 4,
            CliError::Module(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Syntax { .. } => "syntax",
            CliError::UnknownKey { .. } => "unknown-key",
            CliError::BadValue { .. } => "bad-value",
            CliError::Report(_) => "malformed-report",
            CliError::Module(propchaos::Error::Io(_)) | CliError::Io { .. } => "io",
            CliError::Module(_) => "precondition",
        }
    }

    /// `error code=<n> kind=<kind> msg="<escaped message>"` on one line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', "\\n");
        format!("error code={} kind={} msg=\"{}\"", self.exit_code(), self.kind(), msg)
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

impl From<propchaos::Error> for CliError {
    fn from(e: propchaos::Error) -> Self {
        CliError::Module(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
