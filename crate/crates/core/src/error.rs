use std::path::PathBuf;

/// Errors returned by sketch construction, workload ingestion and metrics.
#[derive(Debug, thiserror::Error)]
#[non_exhaustive]
pub enum Error {
    /// A numeric parameter is outside its valid domain.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Two sketches cannot be combined.
    #[error("incompatible sketches: {0}")]
    Incompatible(String),

    /// An item id does not fit the configured universe.
    #[error("item {item} is outside the universe [0, {universe})")]
    OutOfUniverse { item: u64, universe: u64 },

    /// A metric was asked for over too few items.
    #[error("not enough items: {0}")]
    NotEnoughItems(String),

    /// A stream file line could not be parsed.
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
