//! User-defined coefficient expressions.
//!
//! Variables: `x0 … x{n−1}` (state), `t`, `u{c}` (stationary OU value of noise component c)
//! and `w{c}` (Wiener value of component c). Besides the fasteval built-ins, `exp`, `ln` and
//! `sqrt` are available.

use std::collections::BTreeSet;
use std::sync::Arc;

use fasteval::{Compiler, Evaler, Instruction, Slab};
use lincert_core::flow::{Dynamics, HypothesisConstants, SystemSpec};
use lincert_core::linalg::{Mat, Vector};
use lincert_core::sde::{SdeFields, SdeSystem};
use lincert_core::timebase::MdsShift;

use crate::error::{CliError, CliResult};

/// A variable referenced by an expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Var {
    T,
    X(usize),
    U(usize),
    W(usize),
}

fn parse_var(name: &str) -> Option<Var> {
    if name == "t" {
        return Some(Var::T);
    }
    let mut chars = name.chars();
    let head = chars.next()?;
    let tail = chars.as_str();
    if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) || (tail.len() > 1 && tail.starts_with('0')) {
        return None;
    }
    let idx: usize = tail.parse().ok()?;
    match head {
        'x' => Some(Var::X(idx)),
        'u' => Some(Var::U(idx)),
        'w' => Some(Var::W(idx)),
        _ => None,
    }
}

fn unary(name: &str, args: &[f64]) -> Option<f64> {
    match (name, args) {
        ("exp", [a]) => Some(a.exp()),
        ("ln", [a]) => Some(a.ln()),
        ("sqrt", [a]) => Some(a.sqrt()),
        _ => None,
    }
}

/// A compiled expression.
pub struct Expr {
    src: String,
    slab: Slab,
    instr: Instruction,
    vars: BTreeSet<Var>,
}

impl std::fmt::Debug for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("Expr").field(&self.src).finish()
    }
}

/// Values bound to the variables during one evaluation.
struct Bindings<'a> {
    t: f64,
    x: &'a [f64],
    omega: Option<&'a MdsShift>,
}

impl Expr {
    pub fn compile(src: &str) -> CliResult<Self> {
        let err = |reason: String| CliError::Expr {
            expr: src.to_string(),
            reason,
        };
        let parser = fasteval::Parser::new();
        let mut slab = Slab::new();
        let instr = parser
            .parse(src, &mut slab.ps)
            .map_err(|e| err(e.to_string()))?
            .from(&slab.ps)
            .compile(&slab.ps, &mut slab.cs);
        let mut vars = BTreeSet::new();
        let mut unknown = None;
        let mut probe = |name: &str, args: Vec<f64>| -> Option<f64> {
            if let Some(v) = unary(name, &args) {
                return Some(v);
            }
            match parse_var(name) {
                Some(v) if args.is_empty() => {
                    vars.insert(v);
                    Some(0.5)
                }
                _ => {
                    unknown.get_or_insert_with(|| name.to_string());
                    None
                }
            }
        };
        let outcome = instr.eval(&slab, &mut probe);
        if let Some(name) = unknown {
            return Err(err(format!("unknown variable or function `{name}`")));
        }
        outcome.map_err(|e| err(e.to_string()))?;
        Ok(Self {
            src: src.to_string(),
            slab,
            instr,
            vars,
        })
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    fn eval(&self, b: &Bindings<'_>) -> f64 {
        let mut ns = |name: &str, args: Vec<f64>| -> Option<f64> {
            if let Some(v) = unary(name, &args) {
                return Some(v);
            }
            match parse_var(name)? {
                Var::T => Some(b.t),
                Var::X(i) => b.x.get(i).copied(),
                Var::U(c) => b.omega.map(|o| o.ou(c, b.t)),
                Var::W(c) => b.omega.map(|o| o.value(c, b.t)),
            }
        };
        self.instr.eval(&self.slab, &mut ns).unwrap_or(f64::NAN)
    }

    /// Largest state index used plus one.
    fn state_dims(&self) -> usize {
        self.vars.iter().filter_map(|v| if let Var::X(i) = v { Some(i + 1) } else { None }).max().unwrap_or(0)
    }

    /// Largest noise component used plus one.
    fn noise_dims(&self) -> usize {
        self.vars
            .iter()
            .filter_map(|v| match v {
                Var::U(c) | Var::W(c) => Some(c + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    fn uses(&self, pred: impl Fn(&Var) -> bool) -> bool {
        self.vars.iter().any(pred)
    }
}

fn compile_all(srcs: &[String]) -> CliResult<Vec<Expr>> {
    srcs.iter().map(|s| Expr::compile(s)).collect()
}

fn reject(expr: &Expr, reason: &str) -> CliError {
    CliError::Expr {
        expr: expr.src.clone(),
        reason: reason.to_string(),
    }
}

/// ẋ = A(t, ω)x + F(t, x, ω) from expressions.
#[derive(Debug)]
pub struct ExprDynamics {
    n: usize,
    k: usize,
    linear: Vec<Expr>,
    nonlinear: Vec<Expr>,
    history: f64,
}

impl ExprDynamics {
    /// `linear` is the n×n matrix A by rows; `nonlinear` the n components of F.
    pub fn new(linear: &[Vec<String>], nonlinear: &[String], history: f64) -> CliResult<Self> {
        let n = nonlinear.len();
        if n == 0 || linear.len() != n || linear.iter().any(|r| r.len() != n) {
            return Err(CliError::scenario("linear part must be an n×n matrix matching the n nonlinear components"));
        }
        let linear = compile_all(&linear.concat())?;
        let nonlinear = compile_all(nonlinear)?;
        for e in &linear {
            if e.uses(|v| matches!(v, Var::X(_))) {
                return Err(reject(e, "the linear part must not depend on the state"));
            }
        }
        for e in &nonlinear {
            if e.state_dims() > n {
                return Err(reject(e, "state index exceeds the dimension"));
            }
        }
        let k = linear.iter().chain(&nonlinear).map(Expr::noise_dims).max().unwrap_or(0);
        let uses_ou = linear.iter().chain(&nonlinear).any(|e| e.uses(|v| matches!(v, Var::U(_))));
        if uses_ou && !(history > 0.0) {
            return Err(CliError::scenario("coefficients reading u need a positive history"));
        }
        Ok(Self {
            n,
            k,
            linear,
            nonlinear,
            history: if uses_ou { history } else { 0.0 },
        })
    }

    /// Whether any coefficient reads the OU process.
    pub fn uses_ou(&self) -> bool {
        self.history > 0.0
    }

    /// F(t, 0, ω) at a few times on the zero path, which must vanish.
    fn check_fixed_point(&self, omega: &MdsShift) -> CliResult<()> {
        let zero = Vector::zeros(self.n);
        for t in [0.0, 0.25, 1.0] {
            let f = self.nonlinear(t, &zero, omega);
            if f.iter().any(|v| !(v.abs() <= 1e-12)) {
                return Err(CliError::scenario("the nonlinearity must vanish at x = 0"));
            }
        }
        Ok(())
    }
}

impl Dynamics for ExprDynamics {
    fn dim(&self) -> usize {
        self.n
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        let b = Bindings {
            t,
            x: &[],
            omega: Some(omega),
        };
        Mat::from_row_iterator(self.n, self.n, self.linear.iter().map(|e| e.eval(&b)))
    }

    fn nonlinear(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        let b = Bindings {
            t,
            x: x.as_slice(),
            omega: Some(omega),
        };
        Vector::from_iterator(self.n, self.nonlinear.iter().map(|e| e.eval(&b)))
    }

    fn history(&self) -> f64 {
        self.history
    }

    fn noise_dims(&self) -> usize {
        self.k
    }
}

/// A system from expressions with declared constants.
pub fn expr_system(name: &str, linear: &[Vec<String>], nonlinear: &[String], constants: HypothesisConstants, history: f64) -> CliResult<SystemSpec> {
    let dynm = ExprDynamics::new(linear, nonlinear, history)?;
    let grid = lincert_core::timebase::TimeGrid::new(-dynm.history - 1.0, 2.0, 0.25)?;
    let zero = MdsShift::new(Arc::new(lincert_core::timebase::NoisePath::zero(dynm.k.max(1), grid)?));
    if !dynm.uses_ou() {
        dynm.check_fixed_point(&zero)?;
    }
    Ok(SystemSpec::new(name, Arc::new(dynm), constants)?)
}

/// dx = f₀(x)dt + Σ f_i(x)∘dW^i from expressions in the state only.
#[derive(Debug)]
pub struct ExprSde {
    n: usize,
    drift: Vec<Expr>,
    diffusion: Vec<Vec<Expr>>,
}

impl ExprSde {
    /// `diffusion[i]` holds the n components of f_{i+1}.
    pub fn new(drift: &[String], diffusion: &[Vec<String>]) -> CliResult<Self> {
        let n = drift.len();
        if n == 0 || diffusion.is_empty() || diffusion.iter().any(|d| d.len() != n) {
            return Err(CliError::scenario("drift needs n components and every diffusion field n components"));
        }
        let drift = compile_all(drift)?;
        let diffusion: Vec<Vec<Expr>> = diffusion.iter().map(|d| compile_all(d)).collect::<CliResult<_>>()?;
        for e in drift.iter().chain(diffusion.iter().flatten()) {
            if e.uses(|v| !matches!(v, Var::X(_))) {
                return Err(reject(e, "SDE coefficients may depend on the state only"));
            }
            if e.state_dims() > n {
                return Err(reject(e, "state index exceeds the dimension"));
            }
        }
        Ok(Self { n, drift, diffusion })
    }
}

impl SdeFields for ExprSde {
    fn dim(&self) -> usize {
        self.n
    }

    fn noise_dims(&self) -> usize {
        self.diffusion.len()
    }

    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let b = Bindings { t: 0.0, x, omega: None };
        let exprs = if j == 0 { &self.drift } else { &self.diffusion[j - 1] };
        for (o, e) in out.iter_mut().zip(exprs) {
            *o = e.eval(&b);
        }
    }
}

/// An SDE system from expressions.
pub fn expr_sde(name: &str, drift: &[String], diffusion: &[Vec<String>]) -> CliResult<SdeSystem> {
    Ok(SdeSystem::new(name, Arc::new(ExprSde::new(drift, diffusion)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lincert_core::timebase::{NoisePath, TimeGrid};
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn zero_omega() -> MdsShift {
        MdsShift::new(Arc::new(NoisePath::zero(1, TimeGrid::new(-1.0, 2.0, 0.25).unwrap()).unwrap()))
    }

    #[test]
    fn evaluates_state_time_and_extra_functions() {
        let e = Expr::compile("exp(x0) + 2*t + sqrt(x1) - ln(1)").unwrap();
        let b = Bindings {
            t: 0.5,
            x: &[0.0, 4.0],
            omega: None,
        };
        assert!((e.eval(&b) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(matches!(Expr::compile("y + 1"), Err(CliError::Expr { .. })));
        assert!(matches!(Expr::compile("foo(x0)"), Err(CliError::Expr { .. })));
        assert!(matches!(Expr::compile("x0 +"), Err(CliError::Expr { .. })));
    }

    #[test]
    fn linear_part_may_not_read_the_state() {
        let err = ExprDynamics::new(&[s(&["-1 + x0"])], &s(&["0"]), 0.0).unwrap_err();
        assert!(matches!(err, CliError::Expr { .. }));
    }

    #[test]
    fn noise_dimension_is_inferred() {
        let d = ExprDynamics::new(&[s(&["-1 + 0.1*u1"])], &s(&["0.1*sin(x0)"]), 20.0).unwrap();
        assert_eq!(d.noise_dims(), 2);
        assert_eq!(d.history(), 20.0);
        let d = ExprDynamics::new(&[s(&["-1"])], &s(&["0.1*sin(x0)"]), 20.0).unwrap();
        assert_eq!(d.history(), 0.0);
    }

    #[test]
    fn nonzero_fixed_point_is_rejected() {
        let c = HypothesisConstants::new(1.0, 1.0, 0.1, 0.1).unwrap();
        assert!(expr_system("bad", &[s(&["-1"])], &s(&["0.1*cos(x0)"]), c.clone(), 0.0).is_err());
        let sys = expr_system("ok", &[s(&["-1"])], &s(&["0.1*sin(x0)"]), c, 0.0).unwrap();
        let x = Vector::from_element(1, 0.3);
        let f = sys.dynamics().nonlinear(0.0, &x, &zero_omega());
        assert!((f[0] - 0.1 * 0.3f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn sde_coefficients_match_builtin_form() {
        let sys = expr_sde("e", &s(&["-x0 + 0.1*sin(x0)"]), &[s(&["0.3*x0"])]).unwrap();
        assert_eq!(sys.noise_dims(), 1);
        let x = Vector::from_element(1, 0.7);
        assert!((sys.field(1, &x)[0] - 0.21).abs() < 1e-15);
        assert!(expr_sde("e", &s(&["-x0 + t"]), &[s(&["0.3*x0"])]).is_err());
        assert!(expr_sde("e", &s(&["-x0 + 1"]), &[s(&["0.3*x0"])]).is_err());
    }

    proptest! {
        #[test]
        fn polynomial_matches_direct_evaluation(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let e = Expr::compile("x0^2 - 3*x0*x1 + x1").unwrap();
            let v = e.eval(&Bindings { t: 0.0, x: &[a, b], omega: None });
            prop_assert!((v - (a * a - 3.0 * a * b + b)).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }
}
