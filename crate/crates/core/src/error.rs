//! Error types shared across the engine.

use thiserror::Error;

/// Errors raised by model evaluation, sampling and verification.
#[derive(Debug, Clone, Error)]
pub enum SimError {
    /// A coefficient returned a non-finite value at a probe or path state.
    #[error("non-finite model evaluation of {what} at t={t}, y={y:?}, c={c}")]
    ModelEvaluation {
        what: &'static str,
        t: f64,
        y: Vec<f64>,
        c: u32,
    },

    /// Monte Carlo quadrature did not reach the requested tolerance.
    #[error("quadrature standard error {achieved} above tolerance {tol} ({context})")]
    Quadrature {
        achieved: f64,
        tol: f64,
        context: &'static str,
    },

    /// A jump-mark sampler violated its support contract.
    #[error("mark sampler contract violated: {0}")]
    SamplerContract(String),

    /// An intensity exceeded (or fell below zero of) its declared bound.
    #[error("intensity bound violated for pair ({from},{to}) at t={t}: lambda={lambda}, bound={bound}")]
    BoundViolation {
        from: u32,
        to: u32,
        t: f64,
        lambda: f64,
        bound: f64,
    },

    /// A path left the finite-state guard region.
    #[error("path diverged at t={t}; last finite state {y:?}")]
    PathDiverged { t: f64, y: Vec<f64> },

    /// Importance weights degenerated below a usable effective sample size.
    #[error("effective sample size {ess:.1} below {min}; bring dominating rates closer to the intensities")]
    DegenerateWeights { ess: f64, min: f64 },

    /// A recorded noise stream is incompatible with the requested replay grid.
    #[error("replay incompatible with recorded noise: {0}")]
    Replay(String),

    /// Preset parameters violate the preset's own invariants.
    #[error("invalid preset: {0}")]
    Preset(String),

    /// A semi-Markov hazard denominator is non-positive at a reachable residence time.
    #[error("semi-Markov hazard undefined at residence {residence} for pair ({from},{to})")]
    HazardDomain { from: u32, to: u32, residence: f64 },

    /// Invalid argument to an operation (pre-condition failure).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every path of an ensemble failed.
    #[error("all {total} paths failed; first error: {first}")]
    AllPathsFailed { total: usize, first: String },
}

pub type Result<T> = std::result::Result<T, SimError>;
