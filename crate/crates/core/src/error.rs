use thiserror::Error;

pub type Result<T> = std::result::Result<T, BevError>;

#[derive(Debug, Error)]
pub enum BevError {
    /// An index fell outside the valid range of the named axis.
    #[error("{axis} index {index} out of range (len {len})")]
    Index {
        axis: &'static str,
        index: usize,
        len: usize,
    },

    /// Invalid rig, spec or dispatch configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data failed a shape or value check.
    #[error("validation error: {0}")]
    Validation(String),

    /// A point lies at or behind the camera plane.
    #[error("point is behind the camera (camera-frame depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("backend `{backend}` does not support the {reducer} reducer")]
    UnsupportedReducer {
        backend: &'static str,
        reducer: &'static str,
    },

    /// The association cache was built for different geometry.
    #[error("stale association cache: {0}")]
    StaleCache(String),

    /// Malformed binary or JSON input. `offset` is a byte offset for binary
    /// formats and `None` for JSON.
    #[error("parse error in `{field}`{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Parse {
        field: String,
        offset: Option<u64>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl BevError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        BevError::Config(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        BevError::Validation(msg.into())
    }
}
