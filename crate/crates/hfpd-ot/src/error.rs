use thiserror::Error;

/// Errors produced across the library.
#[derive(Debug, Error)]
pub enum HfpdError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("solver did not converge: {0} (last error {1:.3e})")]
    Convergence(String, f64),

    #[error("degenerate problem: {0}")]
    Degeneracy(String),

    #[error("sampler health: {0}")]
    SamplerHealth(String),

    #[error("matrix not positive definite: {0}")]
    Definiteness(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HfpdError>;
