use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Schema(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io failure: {0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Schema(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 4,
        }
    }
}

impl From<qrlab::Error> for RunError {
    fn from(e: qrlab::Error) -> Self {
        RunError::Numerical(e.to_string())
    }
}
