//! Cutoff of the nonlinearity outside a random ball and the local linearization built on it.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use super::{CocycleSpec, RandomConjugacy, RandomConjugacyConfig, RandomConstants};
use crate::error::{Error, Result};
use crate::flow::{self, Dynamics, SystemSpec, Tensor};
use crate::linalg::{Mat, Vector};
use crate::sampling;
use crate::timebase::{MdsShift, NoisePath, TimeGrid};

/// Largest slope of the bump profile, attained at r = 3/2.
pub const BUMP_SLOPE: f64 = 2.0;

fn smooth_edge(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-1.0 / x).exp()
    }
}

/// C^∞ profile χ: 1 on [0, 1], 0 on [2, ∞).
pub fn bump(r: f64) -> f64 {
    if r <= 1.0 {
        return 1.0;
    }
    if r >= 2.0 {
        return 0.0;
    }
    let a = smooth_edge(2.0 - r);
    let b = smooth_edge(r - 1.0);
    a / (a + b)
}

/// χ'(r).
pub fn bump_derivative(r: f64) -> f64 {
    if r <= 1.0 || r >= 2.0 {
        return 0.0;
    }
    let (u, v) = (2.0 - r, r - 1.0);
    let a = smooth_edge(u);
    let b = smooth_edge(v);
    let da = -a / (u * u);
    let db = b / (v * v);
    (da * (a + b) - a * (da + db)) / ((a + b) * (a + b))
}

/// Lipschitz overhead of x ↦ χ(‖x‖/σ)F(x) over Lip_F(B_{2σ}) when F(0) = 0.
const OVERHEAD: f64 = 1.0 + 2.0 * BUMP_SLOPE;

/// Settings of the dyadic radius search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffConfig {
    /// Outer radius c.
    pub c: f64,
    /// Lipschitz budget L0.
    pub l0: f64,
    /// Point pairs per radius.
    pub pairs: usize,
    pub seed: u64,
    /// Deepest dyadic level j in c/2 · 2^{−j}.
    pub max_level: u32,
    pub tol_bound: f64,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            l0: 0.1,
            pairs: 100,
            seed: 0,
            max_level: 40,
            tol_bound: 1e-2,
        }
    }
}

/// Random inner radius σ(θ_t ω), sampled per cell of the base grid, with the profile data.
#[derive(Debug, Clone)]
pub struct CutoffSpec {
    config: CutoffConfig,
    base: Arc<NoisePath>,
    first: usize,
    sigma: Vec<f64>,
    levels: Vec<u32>,
    lipschitz: Vec<f64>,
}

/// Sampled summary of a cutoff for reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffSummary {
    pub c: f64,
    pub l0: f64,
    pub window: (f64, f64),
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub deepest_level: u32,
    /// max over cells of the probed Lip_F(B_{2σ}) times the bump overhead.
    pub budget_used: f64,
}

fn probed_lipschitz(dynm: &dyn Dynamics, omega: &MdsShift, times: &[f64], unit: &[(Vector, Vector)], radius: f64) -> f64 {
    let mut best: f64 = 0.0;
    for &t in times {
        for (x, y) in unit {
            let (x, y) = (x * radius, y * radius);
            let d = (&x - &y).norm();
            if d > 0.0 {
                let q = (dynm.nonlinear(t, &x, omega) - dynm.nonlinear(t, &y, omega)).norm() / d;
                best = best.max(q);
            }
        }
    }
    best
}

/// σ per base-grid cell of `[lo, hi]`: the largest c/2 · 2^{−j} whose probed Lip_F(B_{2σ}) times the overhead meets L0.
pub fn cutoff(sys: &SystemSpec, base: &Arc<NoisePath>, lo: f64, hi: f64, config: &CutoffConfig) -> Result<CutoffSpec> {
    if !(config.c > 0.0) || !(config.l0 > 0.0) || config.pairs == 0 {
        return Err(Error::config("cutoff needs c > 0, L0 > 0 and at least one probe pair"));
    }
    let omega = MdsShift::new(base.clone());
    sys.require_coverage(&omega, lo, hi)?;
    let grid = base.grid();
    let first = grid.index_of(lo)?;
    let last = grid.index_of(hi)?;
    if last <= first {
        return Err(Error::config("cutoff window must contain at least one cell"));
    }
    let n = sys.dim();
    let unit = sampling::ball_pairs(config.seed, config.pairs, n, 1.0);
    let dynm = sys.dynamics().as_ref();
    let dt = grid.dt();
    let mut sigma = Vec::with_capacity(last - first);
    let mut levels = Vec::with_capacity(last - first);
    let mut lipschitz = Vec::with_capacity(last - first);
    for k in first..last {
        let t = grid.node(k);
        let times = [t, t + 0.5 * dt, t + dt];
        let mut chosen = None;
        let mut best = f64::INFINITY;
        for j in 0..=config.max_level {
            let r = 0.5 * config.c * (0.5).powi(j as i32);
            let lip = probed_lipschitz(dynm, &omega, &times, &unit, 2.0 * r) * OVERHEAD;
            best = best.min(lip);
            if lip <= config.l0 {
                chosen = Some((r, j, lip));
                break;
            }
        }
        let (r, j, lip) = chosen.ok_or(Error::Budget { l0: config.l0, best })?;
        sigma.push(r);
        levels.push(j);
        lipschitz.push(lip);
    }
    Ok(CutoffSpec {
        config: config.clone(),
        base: base.clone(),
        first,
        sigma,
        levels,
        lipschitz,
    })
}

impl CutoffSpec {
    pub fn config(&self) -> &CutoffConfig {
        &self.config
    }

    pub fn c(&self) -> f64 {
        self.config.c
    }

    pub fn l0(&self) -> f64 {
        self.config.l0
    }

    pub fn base(&self) -> &Arc<NoisePath> {
        &self.base
    }

    /// Base-time window `[lo, hi]` on which σ is sampled.
    pub fn window(&self) -> (f64, f64) {
        let g = self.base.grid();
        (g.node(self.first), g.node(self.first + self.sigma.len()))
    }

    /// σ per cell.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    fn cell(&self, omega: &MdsShift, t: f64) -> usize {
        let p = omega.position(t);
        let r = p.round();
        let p = if (p - r).abs() < 1e-9 { r } else { p.floor() };
        let k = p as i64 - self.first as i64;
        k.clamp(0, self.sigma.len() as i64 - 1) as usize
    }

    /// σ(θ_t ω) for a shift of the base path; clamped outside the window.
    pub fn sigma_at(&self, omega: &MdsShift, t: f64) -> f64 {
        self.sigma[self.cell(omega, t)]
    }

    /// Whether base-shifted time range `[lo, hi]` of `omega` lies in the window.
    pub fn covers(&self, omega: &MdsShift, lo: f64, hi: f64) -> bool {
        let (a, b) = self.window();
        let s = omega.offset();
        Arc::ptr_eq(&self.base, omega.base()) && lo + s >= a - 1e-9 && hi + s <= b + 1e-9
    }

    fn require(&self, omega: &MdsShift, lo: f64, hi: f64) -> Result<()> {
        if !Arc::ptr_eq(&self.base, omega.base()) {
            return Err(Error::config("cutoff was built on a different noise path"));
        }
        if self.covers(omega, lo, hi) {
            Ok(())
        } else {
            let (a, b) = self.window();
            Err(Error::OutOfRange {
                t: if lo + omega.offset() < a { lo } else { hi },
                lo: a,
                hi: b,
            })
        }
    }

    pub fn summary(&self) -> CutoffSummary {
        CutoffSummary {
            c: self.config.c,
            l0: self.config.l0,
            window: self.window(),
            sigma_min: self.sigma.iter().copied().fold(f64::INFINITY, f64::min),
            sigma_max: self.sigma.iter().copied().fold(0.0, f64::max),
            deepest_level: self.levels.iter().copied().max().unwrap_or(0),
            budget_used: self.lipschitz.iter().copied().fold(0.0, f64::max),
        }
    }

    /// The cutoff system ẋ = A x + χ(‖x‖/σ)F(x), keeping the declared constants of `sys`.
    pub fn system(self: &Arc<Self>, sys: &SystemSpec) -> Result<SystemSpec> {
        let dynamics = CutoffDynamics {
            inner: sys.dynamics().clone(),
            cut: self.clone(),
        };
        SystemSpec::new(format!("{}-cutoff", sys.name()), Arc::new(dynamics), sys.constants().clone())
    }

    /// Probed Lipschitz constant of F̃(θ_t ω, ·) over the whole space, per node of `[0, 1]`, averaged.
    pub fn lipschitz_integral(self: &Arc<Self>, sys: &SystemSpec, omega: &MdsShift) -> Result<f64> {
        self.require(omega, 0.0, 1.0)?;
        let dynm = CutoffDynamics {
            inner: sys.dynamics().clone(),
            cut: self.clone(),
        };
        let dt = omega.dt();
        let steps = (1.0 / dt).round() as usize;
        let unit = sampling::ball_pairs(self.config.seed ^ 0x5eed, self.config.pairs, sys.dim(), 1.0);
        let mut total = 0.0;
        for k in 0..=steps {
            let t = k as f64 * dt;
            let radius = 2.5 * self.sigma_at(omega, t);
            let l = probed_lipschitz(&dynm, omega, &[t], &unit, radius);
            let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
            total += w * l * dt;
        }
        Ok(total)
    }
}

/// ẋ = A x + χ(‖x‖/σ(θ_t ω))F(x).
#[derive(Clone)]
pub struct CutoffDynamics {
    inner: Arc<dyn Dynamics>,
    cut: Arc<CutoffSpec>,
}

impl CutoffDynamics {
    fn weight(&self, t: f64, x: &Vector, omega: &MdsShift) -> f64 {
        bump(x.norm() / self.cut.sigma_at(omega, t))
    }
}

impl Dynamics for CutoffDynamics {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        self.inner.linear(t, omega)
    }

    fn nonlinear(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        let w = self.weight(t, x, omega);
        if w == 1.0 {
            self.inner.nonlinear(t, x, omega)
        } else if w == 0.0 {
            Vector::zeros(x.len())
        } else {
            self.inner.nonlinear(t, x, omega) * w
        }
    }

    fn derivative_order(&self) -> usize {
        self.inner.derivative_order().min(1)
    }

    fn nonlinear_derivative(&self, order: usize, t: f64, x: &Vector, omega: &MdsShift) -> Option<Tensor> {
        match order {
            1 => {
                let sigma = self.cut.sigma_at(omega, t);
                let r = x.norm() / sigma;
                if r >= 2.0 {
                    return Some(Tensor::zeros(x.len(), 1));
                }
                let df = self.inner.nonlinear_derivative(1, t, x, omega)?.to_matrix();
                if r <= 1.0 {
                    return Some(Tensor::from_matrix(&df));
                }
                let f = self.inner.nonlinear(t, x, omega);
                let grad = x * (bump_derivative(r) / (sigma * x.norm()));
                Some(Tensor::from_matrix(&(df * bump(r) + f * grad.transpose())))
            }
            _ => None,
        }
    }

    fn history(&self) -> f64 {
        self.inner.history()
    }

    fn noise_dims(&self) -> usize {
        self.inner.noise_dims()
    }
}

/// First exit time from U(θ_τ ω) = {‖x‖ < σ(θ_τ ω)}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TMax {
    Finite(f64),
    /// No exit up to the horizon.
    Beyond,
}

impl TMax {
    /// Whether grid time `t` lies strictly before the exit.
    pub fn admits(&self, t: f64) -> bool {
        match self {
            TMax::Finite(e) => t < *e - 1e-9,
            TMax::Beyond => true,
        }
    }
}

/// First grid time in `[0, horizon]` at which ψ(τ, ω, x) leaves U(θ_τ ω).
pub fn t_max(coc: &CocycleSpec, cut: &CutoffSpec, x: &Vector, horizon: f64) -> Result<TMax> {
    let omega = coc.omega();
    cut.require(omega, 0.0, horizon)?;
    if !(x.norm() < cut.sigma_at(omega, 0.0)) {
        return Ok(TMax::Finite(0.0));
    }
    let grid = TimeGrid::new(0.0, horizon, coc.dt())?;
    let traj = flow::solve_ivp(coc.system(), omega, 0.0, x, &grid)?;
    for (k, state) in traj.states().iter().enumerate() {
        let t = grid.node(k);
        if !(state.norm() < cut.sigma_at(omega, t)) {
            return Ok(TMax::Finite(t));
        }
    }
    Ok(TMax::Beyond)
}

/// Settings of the local linearization.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalConfig {
    pub conjugacy: RandomConjugacyConfig,
    /// Horizon for t_max and the identity ψ = ψ̃.
    pub horizon: f64,
    /// Times at which the orbit residual is evaluated when they fall before t_max.
    pub times: Vec<f64>,
    pub probes: usize,
    /// Probe radius as a fraction of σ(ω).
    pub probe_fraction: f64,
    pub seed: u64,
    pub tol_conj: f64,
    pub tol_identity: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        Self {
            conjugacy: RandomConjugacyConfig::default(),
            horizon: 3.0,
            times: alloc::vec![0.5, 1.0, 2.0],
            probes: 20,
            probe_fraction: 0.95,
            seed: 0,
            tol_conj: 1e-3,
            tol_identity: 1e-6,
        }
    }
}

/// Windowed evidence for one probe x ∈ U(ω).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalProbe {
    pub x: Vec<f64>,
    pub t_max: TMax,
    /// Times before t_max at which the residual was evaluated.
    pub times: Vec<f64>,
    /// ‖h̃(θ_t ω, Φ(t, ω)h̃⁻¹(ω, x)) − ψ(t, ω, x)‖ at those times.
    pub residuals: Vec<f64>,
    /// max ‖ψ(t, ω, x) − ψ̃(t, ω, x)‖ over grid times before t_max.
    pub identity_gap: f64,
}

/// Local linearization report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalReport {
    pub cutoff: CutoffSummary,
    pub constants: RandomConstants,
    pub probes: Vec<LocalProbe>,
    pub max_residual: f64,
    pub max_identity_gap: f64,
    pub tol_conj: f64,
    pub tol_identity: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

/// Random conjugacy of the cutoff system, checked on probes of U(ω) only before their exit times.
pub fn local_linearize(coc: &CocycleSpec, cut: &Arc<CutoffSpec>, config: &LocalConfig) -> Result<LocalReport> {
    let rc = local_conjugacy(coc, cut, config)?;
    local_report(coc, cut, &rc, config)
}

/// The random conjugacy h̃ of the cutoff system.
pub fn local_conjugacy(coc: &CocycleSpec, cut: &Arc<CutoffSpec>, config: &LocalConfig) -> Result<RandomConjugacy> {
    cut.require(coc.omega(), 0.0, config.horizon)?;
    let tilde = coc.with_system(cut.system(coc.system())?);
    let mut cc = config.conjugacy.clone();
    if cc.constants.is_none() {
        cc.probe_radius = 2.2 * cut.summary().sigma_max;
    }
    RandomConjugacy::new(&tilde, cc)
}

/// Windowed evidence for a conjugacy `rc` built by [`local_conjugacy`].
pub fn local_report(coc: &CocycleSpec, cut: &Arc<CutoffSpec>, rc: &RandomConjugacy, config: &LocalConfig) -> Result<LocalReport> {
    let omega = coc.omega();
    let dt = coc.dt();
    cut.require(omega, 0.0, config.horizon)?;
    let tilde = rc.cocycle();
    let tilde_sys = tilde.system().clone();
    let here = rc.field_at(0.0)?;
    let n = coc.system().dim();
    let sigma0 = cut.sigma_at(omega, 0.0);
    let points = sampling::ball_points(config.seed, config.probes, n, config.probe_fraction * sigma0);
    let grid = TimeGrid::new(0.0, config.horizon, dt)?;
    let mut fields = Vec::with_capacity(config.times.len());
    for &t in &config.times {
        fields.push(if t <= config.horizon { Some(rc.field_at(t)?) } else { None });
    }
    let mut probes = Vec::with_capacity(points.len());
    let mut max_residual: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    for x in points {
        let exit = t_max(coc, cut, &x, config.horizon)?;
        let orig = flow::solve_ivp(coc.system(), omega, 0.0, &x, &grid)?;
        let cutd = flow::solve_ivp(&tilde_sys, omega, 0.0, &x, &grid)?;
        let mut gap: f64 = 0.0;
        for (k, (a, b)) in orig.states().iter().zip(cutd.states()).enumerate() {
            if exit.admits(grid.node(k)) {
                gap = gap.max((a - b).norm());
            }
        }
        let xi = here.g(0.0, &x)?;
        let mut times = Vec::new();
        let mut residuals = Vec::new();
        for (&t, field) in config.times.iter().zip(&fields) {
            let Some(there) = field else { continue };
            if !exit.admits(t) {
                continue;
            }
            let left = there.h(0.0, &(tilde.linear(t)? * &xi))?;
            let right = orig.state(t)?;
            let r = (left - right).norm();
            times.push(t);
            residuals.push(r);
            max_residual = max_residual.max(r);
        }
        max_gap = max_gap.max(gap);
        probes.push(LocalProbe {
            x: x.iter().copied().collect(),
            t_max: exit,
            times,
            residuals,
            identity_gap: gap,
        });
    }
    let mut failures = Vec::new();
    if max_residual > config.tol_conj {
        failures.push(format!("windowed orbit residual {max_residual} exceeds {}", config.tol_conj));
    }
    if max_gap > config.tol_identity {
        failures.push(format!("ψ vs ψ̃ gap {max_gap} exceeds {}", config.tol_identity));
    }
    Ok(LocalReport {
        cutoff: cut.summary(),
        constants: rc.constants().clone(),
        probes,
        max_residual,
        max_identity_gap: max_gap,
        tol_conj: config.tol_conj,
        tol_identity: config.tol_identity,
        pass: failures.is_empty(),
        failures,
    })
}
