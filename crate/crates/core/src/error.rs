use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("missing pose for frame {0}")]
    MissingPose(usize),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("empty trajectory: no footprints given")]
    EmptyTrajectory,

    #[error("undefined MOTA: ground truth contains no boxes")]
    EmptyGroundTruth,

    #[error("infeasible scenario: {0}")]
    InfeasibleConfig(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            source_name: "<input>".to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Replaces the placeholder source name of a parse error with a file name.
    pub fn with_source(self, name: &str) -> Self {
        match self {
            Error::Parse { line, msg, .. } => Error::Parse {
                source_name: name.to_string(),
                line,
                msg,
            },
            other => other,
        }
    }

    /// Line number carried by a parse error.
    pub fn line(&self) -> Option<usize> {
        match self {
            Error::Parse { line, .. } => Some(*line),
            _ => None,
        }
    }
}
