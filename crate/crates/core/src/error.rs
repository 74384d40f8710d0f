use thiserror::Error;

/// Errors raised by the separation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid partition: {num_soi} sources of interest with {num_channels} channels")]
    InvalidPartition { num_soi: usize, num_channels: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("singular filter update at frequency {freq}, channel {channel}")]
    SingularUpdate { freq: usize, channel: usize },

    #[error("singular background update at frequency {freq}")]
    SingularBackground { freq: usize },

    #[error("singular demixing matrix at frequency {freq}")]
    SingularDemixing { freq: usize },

    #[error("wrong source model: {0}")]
    WrongModel(&'static str),

    #[error("rank-deficient reference set")]
    RankDeficient,

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
