use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A layer produced NaN or infinity.
    #[error("non-finite activation in layer {layer}")]
    NonFinite { layer: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("disconnected neighbourhood graph ({components} components, sizes {sizes:?}); increase k")]
    Disconnected { components: usize, sizes: Vec<usize> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
