use thiserror::Error;

pub type Result<T> = std::result::Result<T, MesmError>;

/// Coarse classification used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum MesmError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimizer did not converge after {iterations} iterations (best objective {best_value}, best point {best_point:?})")]
    NotConverged {
        iterations: usize,
        best_value: f64,
        best_point: Vec<f64>,
    },

    #[error("cell (design {design}, point {point}): {source}")]
    Cell {
        design: usize,
        point: usize,
        #[source]
        source: Box<MesmError>,
    },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<MesmError>,
    },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl MesmError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        MesmError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        MesmError::Numerical(msg.into())
    }

    pub fn at_stage(self, stage: &'static str) -> Self {
        MesmError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            MesmError::InvalidInput(_) => ErrorKind::Validation,
            MesmError::Numerical(_) | MesmError::NotConverged { .. } => ErrorKind::Numerical,
            MesmError::Cell { source, .. } | MesmError::Stage { source, .. } => source.kind(),
            MesmError::Io(_) => ErrorKind::Io,
            MesmError::Csv(_) | MesmError::Json(_) => ErrorKind::Validation,
        }
    }

    /// Name of the outermost pipeline stage the error was raised in, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            MesmError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
