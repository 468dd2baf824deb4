use thiserror::Error;

/// Errors produced anywhere in the detection chain.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration is internally inconsistent or out of its sanity bounds.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model cannot be resolved from the data (coincident centers, missing modes).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative fit did not converge.
    #[error("fit did not converge after {iterations} iterations (chi2 = {chi2:.4e})")]
    Fit {
        iterations: usize,
        chi2: f64,
        residuals: Vec<f64>,
    },

    /// No threshold can satisfy the requested noise target.
    #[error("threshold saturated: {0}")]
    Saturation(String),

    /// A selection cut accepts nothing.
    #[error("degenerate cut: {0}")]
    DegenerateCut(String),

    /// Malformed binary trace file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// A pipeline stage failed; carries the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    /// Wraps `self` with the name of the stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } => 3,
            Error::Stage { source, .. } => match source.as_ref() {
                Error::Config(_) => 2,
                Error::Format { .. } => 3,
                _ => 4,
            },
            _ => 4,
        }
    }
}
