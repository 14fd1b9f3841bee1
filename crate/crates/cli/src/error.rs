use std::fmt;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub error: anyhow::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Other,
}

impl ErrorKind {
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Numeric => 4,
            ErrorKind::Other => 1,
        }
    }
}

impl CliError {
    pub fn new(kind: ErrorKind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(ErrorKind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn context(self, what: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            error: self.error.context(what),
        }
    }

    pub fn exit_code(&self) -> u8 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<evdistill::Error> for CliError {
    fn from(e: evdistill::Error) -> Self {
        use evdistill::Error as E;
        let kind = match &e {
            E::InvalidArgument(_) => ErrorKind::Config,
            E::Data(_) | E::Format { .. } | E::Io { .. } | E::Shape(_) => ErrorKind::Data,
            E::Numeric(_) => ErrorKind::Numeric,
            E::State(_) => ErrorKind::Other,
        };
        Self::new(kind, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Data, e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(ErrorKind::Data, e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
