use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}: line {line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical overflow in r-trend update (params: {params})")]
    Overflow { params: String },

    #[error("no admissible draws: every sample has zero posterior density")]
    NoAdmissibleDraws,

    #[error("all joint importance weights are zero")]
    DegenerateWeights,

    #[error("cannot truncate: {0}")]
    Truncation(String),

    #[error("area {area}: {source}")]
    Area {
        area: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_area(self, area: &str) -> Self {
        Error::Area {
            area: area.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
