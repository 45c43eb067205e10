//! Errors of the std layer and their process exit codes.

use lincert_core::Error as CoreError;

/// Exit code of a completed run whose checks all pass.
pub const EXIT_PASS: i32 = 0;
/// Exit code of a completed run with at least one failing check.
pub const EXIT_FAIL: i32 = 1;
/// Exit code of malformed input: scenario, CLI arguments or files.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code of a rejected hypothesis or stability gate.
pub const EXIT_HYPOTHESIS: i32 = 3;
/// Exit code of numerical divergence.
pub const EXIT_DIVERGENCE: i32 = 4;

/// Failures of scenario loading, evaluation and report writing.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid expression `{expr}`: {reason}")]
    Expr { expr: String, reason: String },

    #[error("cannot write report: {0}")]
    Output(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn scenario(msg: impl Into<String>) -> Self {
        CliError::Scenario(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            CliError::Io { .. } | CliError::Scenario(_) | CliError::Expr { .. } => EXIT_CONFIG,
            CliError::Output(_) => EXIT_FAIL,
        }
    }

    /// Short machine-readable kind.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => core_kind(e),
            CliError::Io { .. } => "io",
            CliError::Scenario(_) => "scenario",
            CliError::Expr { .. } => "expression",
            CliError::Output(_) => "output",
        }
    }
}

/// Exit code for a core error, looking through stage wrappers.
pub fn core_exit_code(e: &CoreError) -> i32 {
    match e.root() {
        CoreError::Config(_) | CoreError::Alignment { .. } | CoreError::OutOfRange { .. } | CoreError::MissingDerivative { .. } => {
            EXIT_CONFIG
        }
        CoreError::HypothesisViolation { .. }
        | CoreError::NotUniformlyStable { .. }
        | CoreError::NonContraction { .. }
        | CoreError::Budget { .. }
        | CoreError::NotACocycle { .. } => EXIT_HYPOTHESIS,
        CoreError::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_FAIL,
    }
}

fn core_kind(e: &CoreError) -> &'static str {
    match e.root() {
        CoreError::Config(_) => "config",
        CoreError::Alignment { .. } => "alignment",
        CoreError::OutOfRange { .. } => "out_of_range",
        CoreError::Divergence { .. } => "divergence",
        CoreError::MissingDerivative { .. } => "missing_derivative",
        CoreError::HypothesisViolation { .. } => "hypothesis_violation",
        CoreError::NotUniformlyStable { .. } => "not_uniformly_stable",
        CoreError::NonContraction { .. } => "non_contraction",
        CoreError::EstimationUncertainty { .. } => "estimation_uncertainty",
        CoreError::DegenerateNorm(_) => "degenerate_norm",
        CoreError::NotACocycle { .. } => "not_a_cocycle",
        CoreError::Budget { .. } => "budget",
        CoreError::OutOfRegime { .. } => "out_of_regime",
        CoreError::DegenerateCohomology(_) => "degenerate_cohomology",
        CoreError::Stage { .. } => "stage",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        let hyp = CoreError::HypothesisViolation {
            inequality: "K·L < α",
            lhs: 1.5,
            rhs: 1.0,
        };
        assert_eq!(CliError::from(hyp.clone()).exit_code(), EXIT_HYPOTHESIS);
        assert_eq!(CliError::from(hyp.in_stage("spectrum")).exit_code(), EXIT_HYPOTHESIS);
        let div = CoreError::Divergence {
            t: 1.0,
            node: 3,
            norm: f64::INFINITY,
        };
        assert_eq!(CliError::from(div).exit_code(), EXIT_DIVERGENCE);
        assert_eq!(CliError::scenario("x").exit_code(), EXIT_CONFIG);
        assert_eq!(CliError::from(CoreError::NotUniformlyStable { lambda1: 0.1 }).kind(), "not_uniformly_stable");
    }
}
