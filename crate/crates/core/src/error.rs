use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("joint graph is not a tree: {0}")]
    Cycle(String),
    #[error("invalid inertia on `{name}`: {reason}")]
    Inertia { name: String, reason: String },
    #[error("root error: {0}")]
    Root(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("trajectory too short: {frames} frames, need at least {required}")]
    TooShort { frames: usize, required: usize },
    #[error("surface has no geometry")]
    EmptySurface,
    #[error("no pose available for frame {0}")]
    MissingPose(usize),
    #[error("normal is not unit length (norm {0})")]
    Norm(f64),
    #[error("negative contact coefficient `{name}` = {value}")]
    Coefficient { name: &'static str, value: f64 },
    #[error("contact state does not match mode {0}")]
    Mode(&'static str),
    #[error("invalid mesh: {0}")]
    Mesh(String),
    #[error("simulation blew up at step {step} (state norm {norm:e})")]
    Blowup { step: usize, norm: f64 },
    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}
