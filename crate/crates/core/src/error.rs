use thiserror::Error;

/// Errors produced by the library layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at action index {index}")]
    NonFinite { index: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid policy row for state {state}: {reason}")]
    InvalidPolicyRow { state: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain mismatch: {0}")]
    Domain(String),

    #[error("policy has no entry at timestep {n} for distribution key {key}")]
    PolicyMiss { n: usize, key: String },

    #[error("enumeration guard exceeded: {count} deterministic policies (limit {limit})")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("lineage guard: estimated {estimated} cache entries exceeds bound {bound}")]
    LineageGuard { estimated: u128, bound: u128 },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("noise path: {0}")]
    NoisePath(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
