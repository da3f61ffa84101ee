use thiserror::Error;

/// Errors produced by the separation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is rank deficient (pivot {pivot:e} at column {column})")]
    RankDeficient { column: usize, pivot: f64 },

    #[error("matrix is not Hermitian (relative asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("all-zero matrix has no principal eigenvector")]
    ZeroMatrix,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frequency bin {freq}: {source}")]
    AtFrequency {
        freq: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("block {block}: {source}")]
    AtBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("weights: {0}")]
    Weights(String),

    #[error("config: {0}")]
    Config(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("serialize: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn at_frequency(self, freq: usize) -> Self {
        Error::AtFrequency {
            freq,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_block(self, block: usize) -> Self {
        Error::AtBlock {
            block,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
