//! Error type shared by every module of the core.

use alloc::boxed::Box;
use alloc::string::String;

use crate::spectrum::LyapunovSpectrum;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure modes of the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or malformed input.
    #[error("configuration error: {0}")]
    Config(String),

    /// A time value that should sit on a grid node does not.
    #[error("time {t} is not aligned to the grid (t0 = {t0}, dt = {dt})")]
    Alignment { t: f64, t0: f64, dt: f64 },

    /// A query falls outside the sampled window.
    #[error("time {t} is outside the sampled window [{lo}, {hi}]")]
    OutOfRange { t: f64, lo: f64, hi: f64 },

    /// The state left the admissible region (non-finite or norm above the guard).
    #[error("divergence at t = {t} (node {node}, norm {norm})")]
    Divergence { t: f64, node: usize, norm: f64 },

    /// A derivative of the nonlinearity was required but not supplied.
    #[error("capability error: derivative of order {order} is not available")]
    MissingDerivative { order: usize },

    /// A hypothesis inequality of the linearization theorems fails.
    #[error("hypothesis violated: {inequality} fails ({lhs} >= {rhs})")]
    HypothesisViolation {
        inequality: &'static str,
        lhs: f64,
        rhs: f64,
    },

    /// The top Lyapunov exponent is not negative.
    #[error("not uniformly stable: top Lyapunov exponent {lambda1} >= 0")]
    NotUniformlyStable { lambda1: f64 },

    /// Picard iteration failed to converge.
    #[error("non-contraction: Picard gap {gap} after {iterations} iterations")]
    NonContraction { iterations: usize, gap: f64 },

    /// Lyapunov spectrum estimate is not trustworthy.
    #[error("estimation uncertainty: {reason}")]
    EstimationUncertainty {
        reason: String,
        partial: Option<Box<LyapunovSpectrum>>,
    },

    /// A quadratic norm has a singular Gram factor.
    #[error("degenerate norm: {0}")]
    DegenerateNorm(String),

    /// The dynamics are not of shifted (cocycle) form.
    #[error("not a cocycle: residual {residual} exceeds {tol}")]
    NotACocycle { residual: f64, tol: f64 },

    /// No admissible cutoff radius exists for the Lipschitz budget.
    #[error("cutoff budget error: no dyadic radius meets L0 = {l0} (smallest probed ratio {best})")]
    Budget { l0: f64, best: f64 },

    /// An iterative inverse did not converge.
    #[error("out of regime: inverse iteration stopped after {iterations} iterations with residual {residual}")]
    OutOfRegime { iterations: usize, residual: f64 },

    /// A Jacobian that must be invertible is singular.
    #[error("degenerate cohomology: {0}")]
    DegenerateCohomology(String),

    /// An error raised inside a named pipeline stage.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
