use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
    #[error("manifest error: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] uhddip_tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, ImagingError>;
