use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("curvelet: {0}")]
    Curvelet(String),
    #[error("payload: {0}")]
    Payload(String),
    #[error("codec: {0}")]
    Codec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
