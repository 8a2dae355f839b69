//! bAbI story and dialog data: parsing, preprocessing, vocabularies,
//! batching, and the binary corpus container.

use std::path::Path;

use thiserror::Error;

pub mod batch;
pub mod corpus;
pub mod dialog;
pub mod story;
pub mod synth;
pub mod vocab;

pub use batch::{batches, make_batch};
pub use corpus::{Corpus, DatasetKind, Episode, Split};
pub use vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown word `{0}`")]
    UnknownWord(String),
    #[error("`{0}` is not a known answer class")]
    UnknownAnswer(String),
    #[error("corpus container: {0}")]
    Format(String),
    #[error("missing dataset files: {0}")]
    Missing(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
