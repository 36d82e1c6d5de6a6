use std::path::PathBuf;

/// Failure modes of `.vol` decoding, kept separate so callers can match on them.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VolumeFormatError {
    #[error("bad magic bytes (expected \"SVOL\")")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("dimension overflow: extents {0:?} do not fit in memory")]
    DimensionOverflow(Vec<u64>),
    #[error("unsupported {what} {value}")]
    Unsupported { what: &'static str, value: u32 },
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a shape or configuration precondition.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numeric operation was evaluated outside its domain (e.g. log of 0).
    #[error("domain error: {0}")]
    Domain(String),
    /// Target-domain ground truth was requested on an unpaired sample.
    #[error("target volume withheld for case {0}")]
    Withheld(String),
    #[error("{}: {kind}", path.display())]
    Volume { path: PathBuf, kind: VolumeFormatError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Domain(_) | Error::Withheld(_) => 1,
            Error::Volume { .. } | Error::Io { .. } | Error::Json { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Returns a contract error unless `cond` holds.
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure;
