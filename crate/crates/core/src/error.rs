use thiserror::Error;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("column {column}: {message}")]
pub struct ParseError {
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Debug, Error)]
pub enum Error {
    #[error("parse error in {context}: {source}")]
    Parse {
        context: String,
        #[source]
        source: ParseError,
    },
    #[error("model error: {0}")]
    Model(String),
    #[error("oracle could not find {needed} admissible sample points after {rejected} rejections")]
    OracleExhausted { needed: usize, rejected: usize },
    #[error("expression budget exceeded: {0}")]
    Budget(String),
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("domain error: {0}")]
    Domain(String),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. } | Error::Model(_) => 2,
            Error::OracleExhausted { .. } | Error::Budget(_) | Error::RankDeficient(_) => 3,
            Error::Domain(_) => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
