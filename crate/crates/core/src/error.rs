use thiserror::Error;
use uhddip_tensor::TensorError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("config error: {0}")]
    Config(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("non-finite value in layer '{layer}' (op {op})")]
    NonFinite { layer: String, op: String },
    #[error("non-finite loss at iteration {iter}: {detail}")]
    Diverged { iter: usize, detail: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("in layer '{layer}': {source}")]
    Layer { layer: String, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Imaging(#[from] uhddip_imaging::ImagingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

/// Attaches a layer name to tensor errors; non-finite values become
/// [`CoreError::NonFinite`] naming the layer.
pub(crate) trait InLayer<T> {
    fn in_layer(self, layer: &str) -> Result<T>;
}

impl<T> InLayer<T> for Result<T, TensorError> {
    fn in_layer(self, layer: &str) -> Result<T> {
        self.map_err(|e| match e {
            TensorError::NonFinite(op) => CoreError::NonFinite { layer: layer.to_string(), op },
            source => CoreError::Layer { layer: layer.to_string(), source },
        })
    }
}
