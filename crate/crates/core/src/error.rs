use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty episode")]
    EmptyEpisode,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("observation contains NaN")]
    NanObservation,
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid data: {0}")]
    Invalid(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot sample {requested} episodes from a buffer holding {available}")]
    InsufficientEpisodes { requested: usize, available: usize },
    #[error("action submitted after the episode ended")]
    EpisodeDone,
    #[error("agent {agent}: unknown action id {action}")]
    UnknownAction { agent: usize, action: usize },
    #[error("trajectory length {len} exceeds the memory limit {max}")]
    TrajectoryTooLong { len: usize, max: usize },
    #[error("trajectories of one episode have different lengths")]
    RaggedEpisode,
    #[error("path enumeration exceeded cap {cap} (found at least {found})")]
    PathCapExceeded { cap: usize, found: usize },
    #[error("pivot {pivot} lies after reward step {step}")]
    InvalidPivot { step: usize, pivot: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
