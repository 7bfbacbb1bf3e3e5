use folio_core::Error as CoreError;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("unknown run `{0}`")]
    UnknownRun(String),

    #[error("run `{0}` already exists; run directories are never overwritten")]
    RunExists(String),

    #[error(transparent)]
    Core(CoreError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// 0 success, 2 config, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownRun(_) | CliError::RunExists(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        use CoreError::*;
        match e {
            InvalidConfig(_) | InvalidKernel(_) | UnknownTarget(_) | RankTooLarge { .. } | InvalidSpec(_)
            | CheckpointMismatch(_) => CliError::Config(e.to_string()),
            MissingColumn(_)
            | NonPositivePrice { .. }
            | EmptyIntersection
            | EmptyRange { .. }
            | SeriesTooShort { .. }
            | InsufficientHistory { .. }
            | EpisodeTooShort { .. }
            | ZeroTarget
            | InvalidData(_)
            | Csv(_) => CliError::Data(e.to_string()),
            DivergedLoss { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Core(other),
        }
    }
}
