use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor, input or layer chain has inconsistent dimensions.
    #[error("shape error: {0}")]
    Shape(String),

    /// Two networks cannot be compared (input or output sizes differ).
    #[error("incompatible networks: {0}")]
    Incompatible(String),

    /// A class pair or label is out of range or degenerate.
    #[error("invalid class pair: {0}")]
    ClassPair(String),

    /// An input region is malformed (negative radius, empty box, ...).
    #[error("invalid input region: {0}")]
    Region(String),

    /// A network description failed validation; names the offending layer
    /// and field.
    #[error("invalid network description at layer {layer}, field `{field}`: {message}")]
    Validation {
        layer: usize,
        field: String,
        message: String,
    },

    /// A file could not be loaded or parsed.
    #[error("failed to load {path}: {message}")]
    Load { path: String, message: String },

    /// A file could not be written.
    #[error("failed to write {path}: {message}")]
    Save { path: String, message: String },

    /// A quantity that must be finite was NaN or infinite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// The LP solver was handed a malformed program.
    #[error("solver error: {0}")]
    Solver(String),

    /// A run configuration is invalid; aggregates every problem found.
    #[error("configuration error: {0}")]
    Config(String),

    /// An oracle or fixture request is outside its supported range.
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
