use std::path::PathBuf;

/// Errors produced anywhere in the analysis, training and conversion pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("unsupported audio encoding in {path}: {reason}")]
    UnsupportedCodec { path: PathBuf, reason: String },
    #[error("empty signal: {0}")]
    EmptySignal(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("no matched utterance pairs between {source_dir} and {target_dir}")]
    EmptyCorpus {
        source_dir: PathBuf,
        target_dir: PathBuf,
    },
    #[error("sample-rate mismatch for {context}: {expected} Hz vs {found} Hz")]
    RateMismatch {
        context: String,
        expected: u32,
        found: u32,
    },
    #[error("size error: {0}")]
    Size(String),
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    #[error("unstable LPC model: {0}")]
    Unstable(String),
    #[error("LSF ordering violated: {0}")]
    Ordering(String),
    #[error("synthesis diverged after {0} samples")]
    SynthesisDivergence(usize),
    #[error("signal too short: {0}")]
    TooShort(String),
    #[error("wrong frame kind: {0}")]
    WrongFrameKind(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("numerical failure at EM iteration {iteration}: {reason}")]
    NumericalFailure { iteration: usize, reason: String },
    #[error("ill-conditioned covariance in component {component}")]
    Conditioning { component: usize },
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("no voiced speech found: {0}")]
    NoSpeech(String),
    #[error("undefined reference: {0}")]
    UndefinedReference(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incompatible model file: {0}")]
    IncompatibleModel(String),
    #[error("model parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("CSV error: {0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (as opposed to bad input data).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure { .. }
                | Error::Conditioning { .. }
                | Error::SynthesisDivergence(_)
                | Error::Unstable(_)
                | Error::DegenerateData(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
