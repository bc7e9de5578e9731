use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes, lengths or indices that do not line up.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("non-finite statistic value {value} at voxel {voxel}")]
    NonFinite { voxel: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Exhaustive enumeration would exceed the configured budget.
    #[error("enumeration budget exceeded: {0}")]
    Budget(String),
}

impl Error {
    pub(crate) fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
