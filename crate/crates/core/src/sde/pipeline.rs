//! SDE → cohomology → RDE cocycle → local linearization → composite conjugacy.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use super::cohomology::{Cohomology, CohomologyConfig};
use super::{lyapunov_sde, sde_flow, SdeSystem};
use crate::error::{Error, Result};
use crate::flow;
use crate::linalg::Vector;
use crate::randomize::{
    cocycle_from_rde, cutoff, local_conjugacy, local_report, t_max, CocycleReport, CutoffConfig, LocalConfig,
    LocalReport, TMax, TOL_COCYCLE,
};
use crate::sampling;
use crate::spectrum::SpectrumConfig;
use crate::timebase::{MdsShift, NoisePath};

/// Representation horizon factor: t_rep = 12/|λ₁| unless configured.
const HORIZON_FACTOR: f64 = 12.0;

/// Settings of the SDE pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub cohomology: CohomologyConfig,
    /// Step of every integrator; must equal the path step.
    pub dt: f64,
    pub spectrum_horizon: f64,
    pub spectrum: SpectrumConfig,
    pub cutoff: CutoffConfig,
    pub local: LocalConfig,
    /// Times in (0, 1] of the end-to-end residual.
    pub residual_times: Vec<f64>,
    pub probes: usize,
    /// Probe radius as a fraction of σ(ω).
    pub probe_fraction: f64,
    /// Radius of the ball on which H₀ is inverted.
    pub inverse_radius: f64,
    pub seed: u64,
    pub tol_inv: f64,
    pub tol_fixed: f64,
    pub tol_cocycle: f64,
    pub tol_end_to_end: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cohomology: CohomologyConfig::default(),
            dt: 1e-2,
            spectrum_horizon: 100.0,
            spectrum: SpectrumConfig::default(),
            cutoff: CutoffConfig::default(),
            local: LocalConfig {
                horizon: 1.0,
                times: vec![0.5, 1.0],
                probes: 10,
                ..LocalConfig::default()
            },
            residual_times: vec![0.25, 0.5, 0.75, 1.0],
            probes: 10,
            probe_fraction: 0.9,
            inverse_radius: 1.0,
            seed: 0,
            tol_inv: 1e-8,
            tol_fixed: 1e-10,
            tol_cocycle: TOL_COCYCLE,
            tol_end_to_end: 1e-1,
        }
    }
}

/// One numeric check of a stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageCheck {
    pub stage: String,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
}

impl StageCheck {
    fn new(stage: &str, name: &str, value: f64, bound: f64) -> Self {
        Self {
            stage: stage.into(),
            name: name.into(),
            value,
            bound,
            pass: value <= bound,
        }
    }
}

/// End-to-end evidence for one probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndToEndProbe {
    /// Probe in RDE coordinates, inside U(ω).
    pub y: Vec<f64>,
    /// The SDE state H₀(ω, y).
    pub x: Vec<f64>,
    pub t_max: TMax,
    pub times: Vec<f64>,
    /// ‖k(θ_t ω, Φ_lin(t, ω)ξ) − ψ_sde(t, ω, k(ω, ξ))‖ at those times.
    pub residuals: Vec<f64>,
}

/// Pipeline report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub system: String,
    pub exponents: Vec<f64>,
    pub alpha: f64,
    pub t_rep: f64,
    /// e^{−t_hist}.
    pub truncation_bias: f64,
    pub checks: Vec<StageCheck>,
    pub cocycle: CocycleReport,
    pub local: LocalReport,
    pub probes: Vec<EndToEndProbe>,
    pub max_end_to_end: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

/// ‖ψ_sde(t, ω, x) − H₀(θ_t ω, ψ_rde(t, ω, H₀⁻¹(ω, x)))‖.
pub fn cohomology_residual(engine: &Cohomology, omega: &MdsShift, x: &Vector, t: f64, dt: f64) -> Result<f64> {
    let rde = engine.induced_system()?;
    let y = engine.h_inverse(omega, 0.0, x)?;
    let yt = flow::flow_map(&rde, omega, 0.0, &y, t, dt)?;
    let left = sde_flow(engine.system(), omega, x, t, dt)?;
    Ok((left - engine.h(omega, t, &yt)?).norm())
}

/// Linearize the SDE near 0 along the path `base`, with every stage checked.
pub fn linearize_sde(sys: &SdeSystem, base: Arc<NoisePath>, config: &PipelineConfig) -> Result<PipelineReport> {
    let dt = config.dt;
    if (base.grid().dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::config("pipeline step must equal the path step"));
    }
    if config.residual_times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::config("residual times must be positive"));
    }
    let omega = MdsShift::new(base.clone());
    let n = sys.dim();
    let zero = Vector::zeros(n);

    let spectrum = lyapunov_sde(sys, &omega, config.spectrum_horizon, dt, &config.spectrum).map_err(|e| e.in_stage("spectrum"))?;
    let alpha = spectrum.alpha().map_err(|e| e.in_stage("spectrum"))?;

    let stage = "cohomology";
    let mut local = config.local.clone();
    let t_rep = local.conjugacy.t_rep.unwrap_or(HORIZON_FACTOR / -spectrum.top());
    let t_rep = (t_rep / dt).ceil() * dt;
    local.conjugacy.t_rep = Some(t_rep);
    local.conjugacy.known_spectrum = Some(spectrum.clone());
    let t_end = config
        .residual_times
        .iter()
        .copied()
        .fold(local.horizon.max(local.conjugacy.t_cover), f64::max);
    let (lo, hi) = (-t_rep - 1.0, t_end + 1.0);
    let mut engine = Cohomology::new(sys, config.cohomology).map_err(|e| e.in_stage(stage))?;
    engine.tabulate(&base, lo, hi).map_err(|e| e.in_stage(stage))?;
    let mut checks = Vec::new();
    let fixed = || -> Result<[f64; 3]> {
        let jet = engine.jet(&omega, 0.0, &zero)?;
        Ok([jet.h.norm(), jet.gamma.norm(), engine.g(&omega, 0.0, &zero)?.norm()])
    };
    let [h0, gamma0, g0] = fixed().map_err(|e| e.in_stage(stage))?;
    checks.push(StageCheck::new(stage, "H0(0) = 0", h0, config.tol_fixed));
    checks.push(StageCheck::new(stage, "Gamma0(0) = 0", gamma0, config.tol_fixed));
    checks.push(StageCheck::new(stage, "g(0) = 0", g0, config.tol_fixed));
    let mut inv: f64 = 0.0;
    for x in sampling::ball_points(config.seed, config.probes, n, config.inverse_radius) {
        let y = engine.h_inverse(&omega, 0.0, &x).map_err(|e| e.in_stage(stage))?;
        let back = engine.h(&omega, 0.0, &y).map_err(|e| e.in_stage(stage))?;
        inv = inv.max((back - &x).norm());
    }
    checks.push(StageCheck::new(stage, "H0(H0^-1(x)) = x", inv, config.tol_inv));

    let stage = "rde";
    let rde = engine.induced_system().map_err(|e| e.in_stage(stage))?;
    let coc = cocycle_from_rde(&rde, base.clone(), dt, config.tol_cocycle).map_err(|e| e.in_stage(stage))?;
    let cocycle = coc.report().clone();
    checks.push(StageCheck::new(stage, "cocycle property", cocycle.cocycle_residual, cocycle.tol));

    let cut = cutoff(coc.system(), &base, lo, hi, &config.cutoff).map_err(|e| e.in_stage("cutoff"))?;
    let cut = Arc::new(cut);

    let stage = "local";
    let rc = local_conjugacy(&coc, &cut, &local).map_err(|e| e.in_stage(stage))?;
    let local_rep = local_report(&coc, &cut, &rc, &local).map_err(|e| e.in_stage(stage))?;
    checks.push(StageCheck::new(stage, "windowed orbit residual", local_rep.max_residual, local_rep.tol_conj));
    checks.push(StageCheck::new(stage, "cutoff identity", local_rep.max_identity_gap, local_rep.tol_identity));

    let stage = "composite";
    let composite = || -> Result<(Vec<EndToEndProbe>, f64)> {
        let lin = sys.linear_part();
        let here = rc.field_at(0.0)?;
        let dh0 = engine.jet(&omega, 0.0, &zero)?.dh;
        let mut fields = Vec::with_capacity(config.residual_times.len());
        for &t in &config.residual_times {
            let dh = engine.jet(&omega, t, &zero)?.dh;
            fields.push((t, rc.field_at(t)?, dh.lu()));
        }
        let sigma0 = cut.sigma_at(&omega, 0.0);
        let horizon = t_end.max(dt);
        let mut probes = Vec::new();
        let mut worst: f64 = 0.0;
        for y in sampling::ball_points(config.seed.wrapping_add(1), config.probes, n, config.probe_fraction * sigma0) {
            let exit = t_max(&coc, &cut, &y, horizon)?;
            let x = engine.h(&omega, 0.0, &y)?;
            let xi = &dh0 * here.g(0.0, &y)?;
            let mut times = Vec::new();
            let mut residuals = Vec::new();
            for (t, there, lu) in &fields {
                if !exit.admits(*t) {
                    continue;
                }
                let v = sde_flow(&lin, &omega, &xi, *t, dt)?;
                let eta = lu
                    .solve(&v)
                    .ok_or_else(|| Error::DegenerateCohomology(format!("DH is singular at t = {t}")))?;
                let left = engine.h(&omega, *t, &there.h(0.0, &eta)?)?;
                let right = sde_flow(sys, &omega, &x, *t, dt)?;
                let r = (left - right).norm();
                worst = worst.max(r);
                times.push(*t);
                residuals.push(r);
            }
            probes.push(EndToEndProbe {
                y: y.iter().copied().collect(),
                x: x.iter().copied().collect(),
                t_max: exit,
                times,
                residuals,
            });
        }
        Ok((probes, worst))
    };
    let (probes, max_end_to_end) = composite().map_err(|e| e.in_stage(stage))?;
    checks.push(StageCheck::new(stage, "end-to-end residual", max_end_to_end, config.tol_end_to_end));

    let failures: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}: {} = {} exceeds {}", c.stage, c.name, c.value, c.bound))
        .collect();
    Ok(PipelineReport {
        system: sys.name().into(),
        exponents: spectrum.exponents.clone(),
        alpha,
        t_rep,
        truncation_bias: engine.truncation_bias(),
        checks,
        cocycle,
        local: local_rep,
        probes,
        max_end_to_end,
        pass: failures.is_empty(),
        failures,
    })
}
