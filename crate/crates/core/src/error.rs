use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("text is empty after normalization: {0:?}")]
    EmptyText(String),

    #[error("symbol {symbol:?} is not in the symbol table")]
    UnknownSymbol { symbol: String },

    #[error("symbol id {id} is outside the embedding table of {size} rows")]
    SymbolOutOfRange { id: usize, size: usize },

    #[error("invalid probability {name} = {value}")]
    InvalidProbability { name: &'static str, value: f64 },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("convolution width must be odd, got {0}")]
    EvenKernel(usize),

    #[error("channel count {0} must be even for a gated linear unit")]
    OddChannels(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("speaker embedding supplied to a single-speaker block")]
    UnexpectedSpeaker,

    #[error("multi-speaker block called without a speaker embedding")]
    MissingSpeaker,

    #[error("speaker id {id} out of range for {count} speakers")]
    SpeakerOutOfRange { id: usize, count: usize },

    #[error("position rate must be positive, got {0}")]
    NonPositiveRate(f64),

    #[error("monotonic attention window is only valid at inference")]
    WindowInTraining,

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("signal of {len} samples is shorter than one analysis window of {window}")]
    SignalTooShort { len: usize, window: usize },

    #[error("decoding stream already finished")]
    StreamDone,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("malformed {what} at line {line}: {detail}")]
    Parse {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
