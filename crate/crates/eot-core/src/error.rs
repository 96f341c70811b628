use thiserror::Error;

/// Error type shared across the library.
#[derive(Debug, Error)]
pub enum EotError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("Langevin chain diverged at step {step}: {detail}")]
    DivergedChain { step: usize, detail: String },

    #[error("Sinkhorn did not converge within {max_iter} iterations (marginal L1 violation {violation:.3e})")]
    SinkhornNonConvergence { max_iter: usize, violation: f64 },

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EotError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        EotError::Io { path: path.into(), source }
    }
}
