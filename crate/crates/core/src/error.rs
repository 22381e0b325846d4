use thiserror::Error;

use crate::ids::UserId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },

    #[error("invalid route: {0}")]
    InvalidRoute(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("similarity undefined for a zero-norm topic vector")]
    ZeroNorm,

    #[error("user {0} has no friends")]
    NoFriends(UserId),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether this error stems from bad input data or configuration
    /// rather than a caller bug.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::InvalidArgument(_))
    }
}
