use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Input(String),
    #[error("unknown noise kind '{0}'")]
    UnknownNoise(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] ppsi_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn input(msg: impl Into<String>) -> Self {
        HarnessError::Input(msg.into())
    }

    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use ppsi_core::Error as E;
        match self {
            HarnessError::Input(_) | HarnessError::UnknownNoise(_) | HarnessError::Io { .. } => 2,
            HarnessError::Core(e) => match e {
                E::DimensionMismatch(_)
                | E::InvalidProblem(_)
                | E::DimensionTooSmall { .. }
                | E::KindMismatch { .. }
                | E::RankDeficientPenalty
                | E::IndexOutOfRange { .. }
                | E::NotSelected(_)
                | E::InvalidArgument(_)
                | E::EmptySelection
                | E::EmptyStableSet => 2,
                _ => 3,
            },
        }
    }
}
