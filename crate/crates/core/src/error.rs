use std::fmt;

/// Error type shared by every module in this crate.
#[derive(Debug)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    Shape {
        op: &'static str,
        detail: String,
    },
    /// Invalid kernel size, architecture hyperparameter, or config file.
    Config(String),
    /// An index fell outside its valid range.
    Index(String),
    /// Non-finite values or another numeric failure.
    Numeric(String),
    /// Window attention requires the window to divide the feature map;
    /// the caller would have to pad. Kept distinct from `Config` so the
    /// cost model can signal it precisely.
    PaddingRequired {
        height: usize,
        width: usize,
        window: usize,
    },
    /// A named weight tensor is missing, unexpected, or mis-shaped.
    Weights(String),
    /// Malformed NTSR/NATW payload or unreadable JSON config.
    Format(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape { op, detail } => write!(f, "{op}: {detail}"),
            Self::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Self::Index(msg) => write!(f, "index out of range: {msg}"),
            Self::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Self::PaddingRequired {
                height,
                width,
                window,
            } => write!(
                f,
                "window attention requires padding: window {window} does not divide {height}x{width}"
            ),
            Self::Weights(msg) => write!(f, "weight store error: {msg}"),
            Self::Format(msg) => write!(f, "format error: {msg}"),
            Self::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Self::Io(err)
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Self::Shape {
            op,
            detail: detail.into(),
        }
    }
}
