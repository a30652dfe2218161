use thiserror::Error;

/// Library-wide error type. `Config` covers invalid inputs detected before any
/// compute, `Solver` covers iterative solves that fail to converge.
#[derive(Debug, Error)]
pub enum GensartError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failure at step {step}: {message}")]
    Solver { step: usize, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("file format error in {path}: {message}")]
    Format { path: String, message: String },
}

impl GensartError {
    pub fn config(msg: impl Into<String>) -> Self {
        GensartError::Config(msg.into())
    }

    pub fn solver(step: usize, msg: impl Into<String>) -> Self {
        GensartError::Solver {
            step,
            message: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 for bad inputs, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            GensartError::Config(_) | GensartError::Io { .. } | GensartError::Format { .. } => 2,
            GensartError::Solver { .. } | GensartError::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, GensartError>;
