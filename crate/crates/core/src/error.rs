use thiserror::Error;

use crate::importance::ImportanceError;
use crate::pwq::QuantError;
use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Importance(#[from] ImportanceError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid descriptor: {0}")]
    Descriptor(String),
    #[error("{0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;
