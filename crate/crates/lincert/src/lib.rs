//! Scenario-driven certification of linearization statements for random and stochastic
//! differential equations, built on `lincert-core`.

pub mod error;
pub mod expr;
pub mod report;
pub mod run;
pub mod scenario;
pub mod verify;

pub use error::{CliError, CliResult};
pub use report::{Check, Report};
pub use run::{run_scenario, RunOptions, RunOutput};
pub use scenario::{Scenario, Stage};
