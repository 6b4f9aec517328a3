use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("architecture error: {0}")]
    Architecture(String),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure in {op}{}: {msg}", .iteration.map(|t| format!(" at iteration {t}")).unwrap_or_default())]
    Numerical {
        op: String,
        iteration: Option<usize>,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(op: &str, msg: impl Into<String>) -> Self {
        Error::Numerical {
            op: op.to_string(),
            iteration: None,
            msg: msg.into(),
        }
    }

    /// Attach an iteration index to a numerical failure.
    pub fn at_iteration(self, t: usize) -> Self {
        match self {
            Error::Numerical { op, msg, .. } => Error::Numerical {
                op,
                iteration: Some(t),
                msg,
            },
            other => other,
        }
    }

    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
