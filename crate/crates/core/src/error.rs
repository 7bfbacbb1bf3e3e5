use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-positive price {value} for asset `{asset}` on {date}")]
    NonPositivePrice {
        asset: String,
        date: NaiveDate,
        value: f64,
    },

    #[error("no trading day is shared by every asset")]
    EmptyIntersection,

    #[error("range {start}..={end} captures no trading days")]
    EmptyRange { start: NaiveDate, end: NaiveDate },

    #[error("series too short: need at least {needed} days, have {available}")]
    SeriesTooShort { needed: usize, available: usize },

    #[error("invalid synthetic market spec: {0}")]
    InvalidSpec(String),

    #[error("invalid decomposition kernel {0}: must be odd and at least 1")]
    InvalidKernel(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss diverged at epoch {epoch}, step {step}: {detail}")]
    DivergedLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("zero target value, MAPE undefined")]
    ZeroTarget,

    #[error("unknown adapter target `{0}`")]
    UnknownTarget(String),

    #[error("rank {rank} exceeds min(d_in, d_out) = {max} for `{target}`")]
    RankTooLarge {
        target: String,
        rank: usize,
        max: usize,
    },

    #[error("strategy requested data at day {requested}, only days before {cutoff} are visible")]
    LookaheadViolation { requested: usize, cutoff: usize },

    #[error("insufficient history: need {needed} days, have {available}")]
    InsufficientHistory { needed: usize, available: usize },

    #[error("episode too short: need at least {needed} days, have {available}")]
    EpisodeTooShort { needed: usize, available: usize },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
