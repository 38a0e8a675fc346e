use thiserror::Error;

/// Failure modes of the numerical pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DslError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("integrator exceeded the step cap of {steps} steps")]
    MaxStepsExceeded { steps: usize },

    #[error("no event detected within {steps} steps (last t = {t})")]
    NoEventDetected { steps: usize, t: f64 },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("start point lies within {tolerance:e} of the domain boundary")]
    StartOnBoundary { tolerance: f64 },

    #[error("could not bracket eigenvalue {n}: g({lo}) = {g_lo}, g({hi}) = {g_hi}")]
    BracketFailure {
        n: usize,
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("implicit Jacobian is singular (condition estimate {condition:e})")]
    SingularJacobian { condition: f64 },

    #[error("training aborted: {failed} of {size} samples failed in epoch {epoch}, batch {batch}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        failed: usize,
        size: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = DslError> = std::result::Result<T, E>;
