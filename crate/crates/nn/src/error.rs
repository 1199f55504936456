use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        NnError::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
