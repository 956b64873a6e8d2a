use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid input parameters or inconsistent shapes.
    #[error("configuration error: {0}")]
    Config(String),

    /// A non-positive material value reached the assembler.
    #[error("assembly error: element {element} has non-positive {quantity} ({value})")]
    Assembly {
        element: usize,
        quantity: &'static str,
        value: f64,
    },

    /// Factorisation breakdown, non-finite values, or a failed bracket.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A Parareal chunk failed; the chunk index is attached.
    #[error("chunk {chunk}: {source}")]
    Chunk {
        chunk: usize,
        #[source]
        source: Box<Error>,
    },

    /// An optimisation iteration failed.
    #[error("optimisation iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True when the root cause is a configuration problem rather than a
    /// numerical one.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Chunk { source, .. } | Error::Iteration { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
