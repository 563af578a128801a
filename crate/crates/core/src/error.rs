use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("degenerate transform")]
    DegenerateTransform,

    #[error("glyph unavailable: font '{font}' has no glyph for {symbol:?}")]
    GlyphUnavailable { font: String, symbol: char },

    #[error("empty field text")]
    EmptyFieldText,

    #[error("symbol {0:?} is not in the charset")]
    UnknownSymbol(char),

    #[error("class id {0} is out of range")]
    ClassOutOfRange(usize),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("diverged at epoch {0}")]
    Diverged(usize),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("length mismatch: {0} results vs {1} ground truths")]
    LengthMismatch(usize, usize),

    #[error("charset mismatch: model was trained for charset {model}, active charset is {active}")]
    CharsetMismatch { model: String, active: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid rule '{rule}': {reason}")]
    Rule { rule: String, reason: String },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("corpus at {path}: {reason}")]
    Corpus { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Attaches a path to an `io::Error`.
pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
