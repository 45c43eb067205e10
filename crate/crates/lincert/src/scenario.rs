//! Scenario files: a TOML document naming a system, a grid, seeds, tolerances and outputs.

use std::collections::BTreeMap;
use std::path::Path;

use lincert_core::flow::{HypothesisConstants, SystemSpec};
use lincert_core::sde::SdeSystem;
use lincert_core::systems;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::expr;

/// Tolerance keys a scenario may set.
pub const TOLERANCE_KEYS: &[&str] = &[
    "tol_conj",
    "tol_inv",
    "tol_bound",
    "tol_lipschitz",
    "tol_fd",
    "tol_identity",
    "tol_cocycle",
    "tol_end_to_end",
    "tol_fixed",
];

/// Stage run by default for the scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Spectrum,
    Conjugacy,
    Local,
    SdePipeline,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Spectrum => "spectrum",
            Stage::Conjugacy => "conjugacy",
            Stage::Local => "local",
            Stage::SdePipeline => "sde-pipeline",
        }
    }
}

/// Built-in test systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Builtin {
    Ts1,
    Ts2,
    Ts3,
    Ts3Local,
    Ts4,
    Ts5,
}

/// Declared constants of an expression system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsDesc {
    pub k: f64,
    pub alpha: f64,
    pub l: f64,
    pub m: f64,
    /// Bounds M₁, M₂, … on derivatives of F.
    #[serde(default)]
    pub m_j: Vec<f64>,
}

/// The system under study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemDesc {
    Builtin {
        name: Builtin,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lambda: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b: Option<f64>,
    },
    /// ẋ = A(t, ω)x + F(t, x, ω).
    Rde {
        linear: Vec<Vec<String>>,
        nonlinear: Vec<String>,
        constants: ConstantsDesc,
    },
    /// dx = f₀(x)dt + Σ f_i(x)∘dW^i.
    Sde { drift: Vec<String>, diffusion: Vec<Vec<String>> },
}

/// Time grid and horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridDesc {
    pub dt: f64,
    /// Sampled path window.
    pub t0: f64,
    pub t1: f64,
    /// History of the stationary OU process and of the SDE cohomology.
    pub history: f64,
    /// QR horizon of the spectrum.
    pub horizon: f64,
    /// Start τ₀ of the deterministic conjugacy field.
    pub tau0: f64,
}

impl Default for GridDesc {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            t0: -40.0,
            t1: 105.0,
            history: 20.0,
            horizon: 100.0,
            tau0: 0.0,
        }
    }
}

/// Seed ensemble: `count` consecutive seeds from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsDesc {
    pub base: u64,
    pub count: usize,
}

impl Default for SeedsDesc {
    fn default() -> Self {
        Self { base: 0, count: 1 }
    }
}

impl SeedsDesc {
    pub fn list(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.base + i).collect()
    }
}

/// Artifacts a run may emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Output {
    Certificate,
    Spectrum,
    Trajectories,
    Pipeline,
}

/// Reference exponents for the spectrum stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Oracle {
    pub exponents: Vec<f64>,
    pub tol: f64,
    /// Compare the seed average instead of every seed.
    #[serde(default)]
    pub average: bool,
}

/// Expected rejection of a negative control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub exit: i32,
    /// Substring the error message must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// A scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub system: SystemDesc,
    #[serde(default)]
    pub grid: GridDesc,
    #[serde(default)]
    pub seeds: SeedsDesc,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub outputs: Vec<Output>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<Oracle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Expect>,
    /// Worker threads for seed ensembles.
    #[serde(default = "one")]
    pub workers: usize,
}

fn one() -> usize {
    1
}

/// A constructed system.
#[derive(Clone)]
pub enum BuiltSystem {
    Rde(SystemSpec),
    Sde(SdeSystem),
}

impl BuiltSystem {
    pub fn name(&self) -> &str {
        match self {
            BuiltSystem::Rde(s) => s.name(),
            BuiltSystem::Sde(s) => s.name(),
        }
    }
}

impl Scenario {
    /// Parse and validate scenario text.
    pub fn parse(text: &str) -> CliResult<Self> {
        let sc: Scenario = toml::from_str(text).map_err(|e| CliError::scenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Scenario(m) => CliError::scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.name.trim().is_empty() {
            return Err(CliError::scenario("name must not be empty"));
        }
        for (k, v) in &self.tolerances {
            if !TOLERANCE_KEYS.contains(&k.as_str()) {
                return Err(CliError::scenario(format!("unknown tolerance `{k}`")));
            }
            if !(*v > 0.0 && v.is_finite()) {
                return Err(CliError::scenario(format!("tolerance `{k}` must be positive, got {v}")));
            }
        }
        let g = &self.grid;
        for (name, v) in [("dt", g.dt), ("history", g.history), ("horizon", g.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::scenario(format!("grid.{name} must be positive")));
            }
        }
        if !(g.t0 <= 0.0 && g.t1 > 0.0) {
            return Err(CliError::scenario("grid window must contain 0 in [t0, t1)"));
        }
        if self.seeds.count == 0 || self.workers == 0 {
            return Err(CliError::scenario("seeds.count and workers must be at least 1"));
        }
        if let Some(o) = &self.oracle {
            if o.exponents.is_empty() || !(o.tol > 0.0) {
                return Err(CliError::scenario("oracle needs exponents and a positive tol"));
            }
        }
        Ok(())
    }

    /// Tolerance `key` or `default`.
    pub fn tol(&self, key: &str, default: f64) -> f64 {
        debug_assert!(TOLERANCE_KEYS.contains(&key));
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    pub fn wants(&self, o: Output) -> bool {
        self.outputs.contains(&o)
    }

    /// Construct the system.
    pub fn build(&self) -> CliResult<BuiltSystem> {
        let h = self.grid.history;
        Ok(match &self.system {
            SystemDesc::Builtin { name, epsilon, lambda, b } => {
                let unused = |what: &str, v: &Option<f64>| -> CliResult<()> {
                    match v {
                        Some(_) => Err(CliError::scenario(format!("{what} does not apply to {name:?}"))),
                        None => Ok(()),
                    }
                };
                match name {
                    Builtin::Ts1 | Builtin::Ts3 => {
                        unused("lambda", lambda)?;
                        unused("b", b)?;
                        let sys = if *name == Builtin::Ts1 {
                            systems::ts1(epsilon.unwrap_or(0.2))?
                        } else {
                            systems::ts3(epsilon.unwrap_or(0.1), h)?
                        };
                        BuiltSystem::Rde(sys)
                    }
                    Builtin::Ts2 | Builtin::Ts3Local | Builtin::Ts5 => {
                        unused("epsilon", epsilon)?;
                        unused("lambda", lambda)?;
                        unused("b", b)?;
                        match name {
                            Builtin::Ts2 => BuiltSystem::Rde(systems::ts2()?),
                            Builtin::Ts3Local => BuiltSystem::Rde(systems::ts3_local(h)?),
                            _ => BuiltSystem::Sde(systems::ts5()?),
                        }
                    }
                    Builtin::Ts4 => {
                        unused("epsilon", epsilon)?;
                        BuiltSystem::Sde(systems::ts4(lambda.unwrap_or(-1.0), b.unwrap_or(0.3))?)
                    }
                }
            }
            SystemDesc::Rde {
                linear,
                nonlinear,
                constants: c,
            } => {
                let constants = HypothesisConstants::new(c.k, c.alpha, c.l, c.m)?.with_derivative_bounds(c.m_j.clone())?;
                BuiltSystem::Rde(expr::expr_system(&self.name, linear, nonlinear, constants, h)?)
            }
            SystemDesc::Sde { drift, diffusion } => BuiltSystem::Sde(expr::expr_sde(&self.name, drift, diffusion)?),
        })
    }
}

/// Scenario files shipped with the tool, as (file name, text).
pub fn bundled() -> Vec<(&'static str, &'static str)> {
    vec![
        ("ts1.toml", include_str!("../scenarios/ts1.toml")),
        ("ts2.toml", include_str!("../scenarios/ts2.toml")),
        ("ts3.toml", include_str!("../scenarios/ts3.toml")),
        ("ts3_local.toml", include_str!("../scenarios/ts3_local.toml")),
        ("ts4.toml", include_str!("../scenarios/ts4.toml")),
        ("ts5.toml", include_str!("../scenarios/ts5.toml")),
        ("ts1_negative_control.toml", include_str!("../scenarios/ts1_negative_control.toml")),
        ("unstable_negative_control.toml", include_str!("../scenarios/unstable_negative_control.toml")),
        ("expression_rde.toml", include_str!("../scenarios/expression_rde.toml")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "m"
stage = "conjugacy"
[system]
kind = "builtin"
name = "ts1"
"#;

    #[test]
    fn minimal_scenario_gets_defaults() {
        let sc = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(sc.grid, GridDesc::default());
        assert_eq!(sc.seeds.list(), vec![0]);
        assert_eq!(sc.tol("tol_conj", 1e-4), 1e-4);
        assert!(matches!(sc.build().unwrap(), BuiltSystem::Rde(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let extra = format!("{MINIMAL}bogus = 1\n");
        assert!(Scenario::parse(&extra).is_err());
        let nested = MINIMAL.replace("name = \"ts1\"", "name = \"ts1\"\nfoo = 2");
        assert!(Scenario::parse(&nested).is_err());
        let tol = format!("{MINIMAL}[tolerances]\ntol_made_up = 1.0\n");
        assert!(Scenario::parse(&tol).is_err());
    }

    #[test]
    fn tolerances_must_be_positive() {
        let zero = format!("{MINIMAL}[tolerances]\ntol_conj = 0.0\n");
        let err = Scenario::parse(&zero).unwrap_err();
        assert!(err.to_string().contains("tol_conj"));
        assert_eq!(err.exit_code(), crate::error::EXIT_CONFIG);
    }

    #[test]
    fn unknown_builtin_is_rejected() {
        assert!(Scenario::parse(&MINIMAL.replace("ts1", "ts9")).is_err());
    }

    #[test]
    fn inapplicable_parameters_are_rejected() {
        let sc = Scenario::parse(&MINIMAL.replace("name = \"ts1\"", "name = \"ts1\"\nb = 0.3")).unwrap();
        assert!(sc.build().is_err());
    }

    #[test]
    fn bundled_scenarios_parse_and_build() {
        for (file, text) in bundled() {
            let sc = Scenario::parse(text).unwrap_or_else(|e| panic!("{file}: {e}"));
            if sc.expect.is_none() {
                sc.build().unwrap_or_else(|e| panic!("{file}: {e}"));
            }
        }
    }

    #[test]
    fn round_trip_through_toml() {
        for (_, text) in bundled() {
            let sc = Scenario::parse(text).unwrap();
            let again = Scenario::parse(&toml::to_string(&sc).unwrap()).unwrap();
            assert_eq!(sc, again);
        }
    }
}
