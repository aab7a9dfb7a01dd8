use thiserror::Error;

/// Errors raised by the numerical layers and the scenario loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected} coordinates, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("collision between bodies {i} and {j}{}", fmt_time(*.time))]
    Collision {
        i: usize,
        j: usize,
        time: Option<f64>,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("iteration limit reached after {iterations} iterations (dual gradient norm {grad_norm:e})")]
    IterationLimit { iterations: usize, grad_norm: f64 },

    #[error("line search trapped against the collision set after {attempts} attempts")]
    CollisionTrapped { attempts: usize },

    #[error("near collision of bodies {i} and {j} at t = {time}")]
    NearCollision { i: usize, j: usize, time: f64 },

    #[error("integrator step size underflow at t = {time}")]
    StepUnderflow { time: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at `{path}`: {msg}")]
    Parse { path: String, msg: String },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigenConvergence { iterations: usize, residual: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

fn fmt_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl Error {
    /// True for failures caused by evaluating the potential on the collision set.
    pub fn is_collision(&self) -> bool {
        matches!(self, Error::Collision { .. })
    }

    /// Attach a time stamp to a collision error.
    pub fn at_time(self, t: f64) -> Self {
        match self {
            Error::Collision { i, j, .. } => Error::Collision { i, j, time: Some(t) },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
