use thiserror::Error;

use crate::smiles::SmilesError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("state error: {0}")]
    State(String),
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error("featurization error: {0}")]
    Featurize(String),
    #[error("ingestion error at line {line}: {reason}")]
    Ingest { line: usize, reason: String },
    #[error("metric error: {0}")]
    Metric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (records {records:?}); try a lower learning rate")]
    NanLoss {
        epoch: usize,
        batch: usize,
        records: Vec<usize>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Smiles(_)
                | Error::Featurize(_)
                | Error::Ingest { .. }
                | Error::Metric(_)
                | Error::Checkpoint(_)
                | Error::Io { .. }
        )
    }
}
