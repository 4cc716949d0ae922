use alloc::string::String;

/// Errors raised by the simulation core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },
    #[error("singular quantity: {0}")]
    Singular(&'static str),
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("graph construction error: {0}")]
    Construction(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("training diverged at step {step}")]
    TrainingDivergence { step: usize },
    #[error("sampler diverged at timestep {t}")]
    SamplerDivergence { t: usize },
    #[error("channel estimation failed: {0}")]
    Estimation(&'static str),
    #[error("degenerate sample set: need at least {needed} samples, got {got}")]
    DegenerateSamples { needed: usize, got: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            expected,
            got,
            context,
        })
    }
}
