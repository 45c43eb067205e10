//! Random dynamical systems generated by random differential equations, the
//! global random conjugacy h(ω, ·) and the cutoff-based local linearization.

mod cutoff;

pub use cutoff::{
    bump, bump_derivative, cutoff, local_conjugacy, local_linearize, local_report, t_max, CutoffConfig, CutoffDynamics, CutoffSpec, CutoffSummary,
    LocalConfig, LocalProbe, LocalReport, TMax, BUMP_SLOPE,
};

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::conjugacy::{ConjugacyField, FieldConfig, HORIZON_FACTOR};
use crate::error::{Error, Result};
use crate::flow::{self, HypothesisConstants, SystemSpec};
use crate::linalg::{self, Mat, Vector};
use crate::sampling;
use crate::spectrum::{lyapunov_qr, AdaptedNormFamily, LyapunovSpectrum, NormConfig, NormFamily, SpectrumConfig};
use crate::timebase::{MdsShift, NoisePath, TimeGrid};

/// Residuals of the shifted-form identity and the cocycle property on probe triples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CocycleReport {
    /// max ‖φ_ω(t, τ, x) − φ_{θ_τ ω}(t − τ, 0, x)‖.
    pub shifted_form_residual: f64,
    /// max ‖ψ(s + t, ω, x) − ψ(t, θ_s ω, ψ(s, ω, x))‖.
    pub cocycle_residual: f64,
    pub tol: f64,
    pub probes: usize,
    pub probe_radius: f64,
}

/// The cocycle ψ(t, ω, x) = φ_ω(t, 0, x) of an RDE driven by a noise path.
#[derive(Debug, Clone)]
pub struct CocycleSpec {
    sys: SystemSpec,
    omega: MdsShift,
    dt: f64,
    report: CocycleReport,
}

/// Default cocycle tolerance.
pub const TOL_COCYCLE: f64 = 1e-6;

/// Wrap an RDE as a cocycle after checking φ_ω(t, τ, x) = φ_{θ_τ ω}(t − τ, 0, x) on probes.
///
/// Probes start in the unit ball and are halved while a probe trajectory diverges.
pub fn cocycle_from_rde(sys: &SystemSpec, base: Arc<NoisePath>, dt: f64, tol_cocycle: f64) -> Result<CocycleSpec> {
    let omega = MdsShift::new(base);
    let mut radius = 1.0;
    let mut attempt = 0;
    let (shifted, cocycle, probes) = loop {
        match probe_cocycle(sys, &omega, dt, radius) {
            Err(Error::Divergence { .. }) if attempt < PROBE_HALVINGS => {
                radius *= 0.5;
                attempt += 1;
            }
            other => break other?,
        }
    };
    let report = CocycleReport {
        shifted_form_residual: shifted,
        cocycle_residual: cocycle,
        tol: tol_cocycle,
        probes,
        probe_radius: radius,
    };
    if shifted > tol_cocycle || cocycle > tol_cocycle {
        return Err(Error::NotACocycle {
            residual: shifted.max(cocycle),
            tol: tol_cocycle,
        });
    }
    Ok(CocycleSpec {
        sys: sys.clone(),
        omega,
        dt,
        report,
    })
}

const PROBE_HALVINGS: usize = 30;

fn probe_cocycle(sys: &SystemSpec, omega: &MdsShift, dt: f64, radius: f64) -> Result<(f64, f64, usize)> {
    let xs = sampling::ball_points(0xc0c0, 3, sys.dim(), radius);
    let mut shifted: f64 = 0.0;
    let mut cocycle: f64 = 0.0;
    for &tau in &[0.5, 1.0] {
        let moved = omega.shift(tau)?;
        for x in &xs {
            let a = flow::flow_map(sys, omega, tau, x, tau + 1.0, dt)?;
            let b = flow::flow_map(sys, &moved, 0.0, x, 1.0, dt)?;
            shifted = shifted.max(linalg::relative_gap(&a, &b));
            let direct = flow::flow_map(sys, omega, 0.0, x, tau + 1.0, dt)?;
            let first = flow::flow_map(sys, omega, 0.0, x, tau, dt)?;
            let composed = flow::flow_map(sys, &moved, 0.0, &first, 1.0, dt)?;
            cocycle = cocycle.max(linalg::relative_gap(&direct, &composed));
        }
    }
    Ok((shifted, cocycle, 2 * xs.len()))
}

impl CocycleSpec {
    pub fn system(&self) -> &SystemSpec {
        &self.sys
    }

    /// θ_0 ω.
    pub fn omega(&self) -> &MdsShift {
        &self.omega
    }

    pub fn base(&self) -> &Arc<NoisePath> {
        self.omega.base()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn report(&self) -> &CocycleReport {
        &self.report
    }

    /// ψ(t, ω, x).
    pub fn psi(&self, t: f64, x: &Vector) -> Result<Vector> {
        if t == 0.0 {
            return Ok(x.clone());
        }
        flow::flow_map(&self.sys, &self.omega, 0.0, x, t, self.dt)
    }

    /// ψ(t, θ_s ω, x).
    pub fn psi_at(&self, s: f64, t: f64, x: &Vector) -> Result<Vector> {
        if t == 0.0 {
            return Ok(x.clone());
        }
        flow::flow_map(&self.sys, &self.omega.shift(s)?, 0.0, x, t, self.dt)
    }

    /// Linear cocycle Φ(t, ω).
    pub fn linear(&self, t: f64) -> Result<Mat> {
        flow::transition(&self.sys, &self.omega, t, 0.0, self.dt)
    }

    /// ‖ψ(s + t, ω, x) − ψ(t, θ_s ω, ψ(s, ω, x))‖.
    pub fn cocycle_residual(&self, s: f64, t: f64, x: &Vector) -> Result<f64> {
        let direct = self.psi(s + t, x)?;
        let composed = self.psi_at(s, t, &self.psi(s, x)?)?;
        Ok((direct - composed).norm())
    }

    /// The same cocycle for another system on the same path, without re-checking.
    pub(crate) fn with_system(&self, sys: SystemSpec) -> Self {
        Self {
            sys,
            omega: self.omega.clone(),
            dt: self.dt,
            report: self.report.clone(),
        }
    }
}

/// Settings of the random conjugacy.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomConjugacyConfig {
    /// Representation horizon: τ₀ = −t_rep; default 12/|λ₁|.
    pub t_rep: Option<f64>,
    /// QR horizon for the spectrum of the linear part.
    pub spectrum_horizon: f64,
    pub spectrum: SpectrumConfig,
    /// Spectrum of the linear part when known; skips the QR estimate.
    pub known_spectrum: Option<LyapunovSpectrum>,
    pub norm: NormConfig,
    pub picard: FieldConfig,
    /// User override of (L, M) in adapted norms.
    pub constants: Option<(f64, f64)>,
    /// Latest orbit time the estimated constants must cover.
    pub t_cover: f64,
    /// Probe design for estimating L and M.
    pub probe_pairs: usize,
    pub probe_radius: f64,
    pub node_stride: usize,
    pub seed: u64,
}

impl Default for RandomConjugacyConfig {
    fn default() -> Self {
        Self {
            t_rep: None,
            spectrum_horizon: 100.0,
            spectrum: SpectrumConfig::default(),
            known_spectrum: None,
            norm: NormConfig::default(),
            picard: FieldConfig::default(),
            constants: None,
            t_cover: 2.0,
            probe_pairs: 200,
            probe_radius: 5.0,
            node_stride: 10,
            seed: 0,
        }
    }
}

/// Constants of the random conjugacy in adapted norms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomConstants {
    pub lambda1: f64,
    pub gap: f64,
    pub k: f64,
    pub alpha: f64,
    pub l: f64,
    pub m: f64,
    pub estimated: bool,
    pub t_rep: f64,
}

/// h(ω, ·) = H_ω(0, ·) with K = 1, α = −λ₁ − a in adapted norms, τ₀ = −t_rep.
#[derive(Debug, Clone)]
pub struct RandomConjugacy {
    coc: CocycleSpec,
    sys: SystemSpec,
    spectrum: LyapunovSpectrum,
    constants: RandomConstants,
    config: RandomConjugacyConfig,
}

/// Sampled evidence for the random conjugacy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomCertificate {
    pub constants: RandomConstants,
    pub times: Vec<f64>,
    /// Per time: max ‖h(θ_t ω, Φ(t, ω)ξ) − ψ(t, ω, h(ω, ξ))‖_{θ_t ω}.
    pub orbit_residuals: Vec<f64>,
    pub near_identity_bound: f64,
    /// max over times and probes of |h(θ_t ω, ξ) − ξ|_{θ_t ω}.
    pub near_identity: f64,
    /// max |h⁻¹(ω, h(ω, ξ)) − ξ|.
    pub inverse_residual: f64,
    /// min det D(h⁻¹) when derivatives are available.
    pub min_determinant: Option<f64>,
    pub tol_conj: f64,
    pub tol_bound: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

impl RandomConjugacy {
    /// Estimate the spectrum at ω, then the constants, then fix K = 1, α = −λ₁ − a.
    pub fn new(coc: &CocycleSpec, config: RandomConjugacyConfig) -> Result<Self> {
        let spectrum = match &config.known_spectrum {
            Some(s) => s.clone(),
            None => lyapunov_qr(coc.system(), coc.omega(), config.spectrum_horizon, coc.dt(), &config.spectrum)?,
        };
        Self::with_spectrum(coc, spectrum, config)
    }

    /// Use a given spectrum of the linear part.
    pub fn with_spectrum(coc: &CocycleSpec, spectrum: LyapunovSpectrum, config: RandomConjugacyConfig) -> Result<Self> {
        let alpha = spectrum.alpha()?;
        let t_rep = config.t_rep.unwrap_or(HORIZON_FACTOR / -spectrum.top());
        let dt = coc.dt();
        let t_rep = (t_rep / dt).ceil() * dt;
        let mut out = Self {
            coc: coc.clone(),
            sys: coc.system().clone(),
            constants: RandomConstants {
                lambda1: spectrum.top(),
                gap: spectrum.gap,
                k: 1.0,
                alpha,
                l: 0.0,
                m: 0.0,
                estimated: config.constants.is_none(),
                t_rep,
            },
            spectrum,
            config,
        };
        let (l, m) = match out.config.constants {
            Some(lm) => lm,
            None => out.estimate_constants()?,
        };
        out.constants.l = l;
        out.constants.m = m;
        let base = coc.system().constants();
        let m_j = if base.m_j.is_empty() { Vec::new() } else { alloc::vec![l] };
        let hc = HypothesisConstants::new(1.0, alpha, l, m)?.with_derivative_bounds(m_j)?;
        hc.require_topological()?;
        out.sys = coc.system().with_constants(hc)?;
        Ok(out)
    }

    pub fn cocycle(&self) -> &CocycleSpec {
        &self.coc
    }

    pub fn spectrum(&self) -> &LyapunovSpectrum {
        &self.spectrum
    }

    pub fn constants(&self) -> &RandomConstants {
        &self.constants
    }

    /// L and M as sampled sup of Lipschitz quotients and of |F| in the adapted norms along [−t_rep, t_cover].
    fn estimate_constants(&self) -> Result<(f64, f64)> {
        let dt = self.coc.dt();
        let t_rep = self.constants.t_rep;
        let hi = (self.config.t_cover / dt).ceil() * dt;
        let grid = TimeGrid::new(-t_rep, hi, dt)?;
        let family = AdaptedNormFamily::along_orbit(self.coc.system(), self.coc.omega(), &self.spectrum, &grid, &self.config.norm)?;
        let n = self.coc.system().dim();
        let pairs = sampling::ball_pairs(self.config.seed, self.config.probe_pairs, n, self.config.probe_radius);
        let dynm = self.coc.system().dynamics();
        let omega = self.coc.omega();
        let mut l: f64 = 0.0;
        let mut m: f64 = 0.0;
        let stride = self.config.node_stride.max(1);
        let mut k = 0;
        while k < grid.len() {
            let t = grid.node(k);
            for (x, y) in &pairs {
                let fx = dynm.nonlinear(t, x, omega);
                let fy = dynm.nonlinear(t, y, omega);
                m = m.max(family.norm_at(k, &fx)).max(family.norm_at(k, &fy));
                let d = family.norm_at(k, &(x - y));
                if d > 0.0 {
                    l = l.max(family.norm_at(k, &(fx - fy)) / d);
                }
            }
            k = if k + 1 == grid.len() { k + 1 } else { (k + stride).min(grid.len() - 1) };
        }
        Ok((l, m))
    }

    /// Conjugacy field of θ_s ω on [−t_rep, 0] with adapted norms.
    pub fn field_at(&self, s: f64) -> Result<ConjugacyField> {
        let omega = self.coc.omega().shift(s)?;
        let grid = TimeGrid::new(-self.constants.t_rep, 0.0, self.coc.dt())?;
        let family = AdaptedNormFamily::along_orbit(&self.sys, &omega, &self.spectrum, &grid, &self.config.norm)?;
        ConjugacyField::new(&self.sys, &omega, grid, NormFamily::Adapted(Arc::new(family)), self.config.picard)
    }

    /// h(θ_s ω, ξ).
    pub fn h(&self, s: f64, xi: &Vector) -> Result<Vector> {
        self.field_at(s)?.h(0.0, xi)
    }

    /// h⁻¹(θ_s ω, η).
    pub fn h_inv(&self, s: f64, eta: &Vector) -> Result<Vector> {
        self.field_at(s)?.g(0.0, eta)
    }

    /// ‖h(θ_t ω, Φ(t, ω)ξ) − ψ(t, ω, h(ω, ξ))‖_{θ_t ω}.
    pub fn orbit_residual(&self, t: f64, xi: &Vector) -> Result<f64> {
        let here = self.field_at(0.0)?;
        let there = self.field_at(t)?;
        self.orbit_residual_with(&here, &there, t, xi)
    }

    fn orbit_residual_with(&self, here: &ConjugacyField, there: &ConjugacyField, t: f64, xi: &Vector) -> Result<f64> {
        let lin = self.coc.linear(t)? * xi;
        let left = there.h(0.0, &lin)?;
        let right = self.coc.psi(t, &here.h(0.0, xi)?)?;
        Ok(there.norm_at(there.grid().steps(), &(left - right)))
    }

    /// Orbit residuals at `times`, near-identity and inverse checks on `probes` points of radius `radius`.
    pub fn certify(&self, times: &[f64], probes: usize, radius: f64, seed: u64, tol_conj: f64, tol_bound: f64) -> Result<RandomCertificate> {
        let n = self.sys.dim();
        let points = sampling::ball_points(seed, probes, n, radius);
        let here = self.field_at(0.0)?;
        let last = here.grid().steps();
        let mut near: f64 = 0.0;
        let mut inverse: f64 = 0.0;
        for x in &points {
            let h = here.h(0.0, x)?;
            near = near.max(here.norm_at(last, &(&h - x)));
            inverse = inverse.max((here.g(0.0, &h)? - x).norm());
        }
        let mut residuals = Vec::with_capacity(times.len());
        for &t in times {
            let there = self.field_at(t)?;
            let mut worst: f64 = 0.0;
            for x in &points {
                worst = worst.max(self.orbit_residual_with(&here, &there, t, x)?);
                let h = there.h(0.0, x)?;
                near = near.max(there.norm_at(last, &(&h - x)));
            }
            residuals.push(worst);
        }
        let min_determinant = if self.sys.dynamics().derivative_order() >= 1 && self.sys.constants().require_smooth().is_ok() {
            let mut d = f64::INFINITY;
            for x in &points {
                d = d.min(here.d2g(0.0, x)?.determinant());
            }
            Some(d)
        } else {
            None
        };
        let bound = self.constants.m / self.constants.alpha;
        let mut failures = Vec::new();
        for (t, r) in times.iter().zip(&residuals) {
            if *r > tol_conj {
                failures.push(format!("t={t}: orbit residual {r} exceeds {tol_conj}"));
            }
        }
        if near > bound * (1.0 + tol_bound) {
            failures.push(format!("near-identity {near} exceeds M/α = {bound}"));
        }
        if inverse > tol_conj {
            failures.push(format!("inverse residual {inverse} exceeds {tol_conj}"));
        }
        if let Some(d) = min_determinant {
            if !(d > 0.0) {
                failures.push(format!("det D(h⁻¹) {d} is not positive"));
            }
        }
        Ok(RandomCertificate {
            constants: self.constants.clone(),
            times: times.to_vec(),
            orbit_residuals: residuals,
            near_identity_bound: bound,
            near_identity: near,
            inverse_residual: inverse,
            min_determinant,
            tol_conj,
            tol_bound,
            pass: failures.is_empty(),
            failures,
        })
    }
}

#[cfg(test)]
mod tests;
