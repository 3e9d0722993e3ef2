use std::path::PathBuf;

/// Errors raised by the analysis engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate village id {0:?}")]
    DuplicateVillage(String),

    #[error("duplicate agro-ecological zone id {0:?}")]
    DuplicateZone(String),

    #[error("village {village:?} references unknown agro-ecological zone {zone:?}")]
    UnknownZone { village: String, zone: String },

    #[error("unknown village id {0:?}")]
    UnknownVillage(String),

    #[error("duplicate observation for village {village:?}, year {year}, season {season}")]
    DuplicateObservation { village: String, year: i32, season: char },

    #[error("{context}: {message}")]
    Validation { context: String, message: String },

    #[error("annual yield undefined for village {village:?} in {year}: both seasons have zero maize area")]
    UndefinedAnnual { village: String, year: i32 },

    #[error("insufficient points for village {village:?}: {found} in window, need at least 3")]
    InsufficientPoints { village: String, found: usize },

    #[error("insufficient villages: {found}, need at least {needed}")]
    InsufficientVillages { found: usize, needed: usize },

    #[error("no observations in window for agro-ecological zone {0:?}")]
    EmptyZone(String),

    #[error("no valid pairwise comparisons: every bottom-cohort yield is non-positive")]
    NoValidPairs,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed pixel file: {0}")]
    PixelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
