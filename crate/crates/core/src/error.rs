use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("{format} parse error at byte {offset}: {message}")]
    Parse {
        format: &'static str,
        offset: usize,
        message: String,
    },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error at byte {offset}: {message}")]
    Checkpoint { offset: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training aborted: non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NumericAbort { epoch: usize, batch: usize, loss: f64 },

    #[error("file error on {path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(format: &'static str, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            format,
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn checkpoint(offset: usize, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}
