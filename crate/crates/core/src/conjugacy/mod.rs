//! Lyapunov–Perron operators, the conjugacy H with inverse G, the derivative
//! D₂G and the Lipschitz certificate.
//!
//! The half-line [τ₀, ∞) is truncated to the field grid [τ₀, t_end]. All
//! operators are Volterra-type, so values at t only depend on [τ₀, t].

mod certificate;

pub use certificate::{
    LipschitzCertificate, OperatorReport, ProbeSpec, SmoothCertificate, TimeReport, Tolerances,
};

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, variational_map, HypothesisConstants, SystemSpec};
use crate::linalg::{Mat, Vector};
use crate::spectrum::NormFamily;
use crate::timebase::{MdsShift, TimeGrid};

/// Default decay horizon: t_end = τ₀ + HORIZON_FACTOR/α.
pub const HORIZON_FACTOR: f64 = 12.0;

/// An element of BC_ω on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundedPathGrid {
    grid: TimeGrid,
    values: Vec<Vector>,
    norm_tag: &'static str,
}

impl BoundedPathGrid {
    pub fn new(grid: TimeGrid, values: Vec<Vector>, norm_tag: &'static str) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::config("path length differs from the grid"));
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::config("path values must be finite"));
        }
        Ok(Self { grid, values, norm_tag })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn norm_tag(&self) -> &'static str {
        self.norm_tag
    }

    /// Value at node `t`.
    pub fn value(&self, t: f64) -> Result<&Vector> {
        Ok(&self.values[self.grid.index_of(t)?])
    }

    /// sup over nodes of ‖values[j]‖_{t_j, ω}.
    pub fn sup_norm(&self, norms: &NormFamily) -> f64 {
        sup_norm_of(&self.values, norms)
    }

    /// Pointwise difference `self − other`.
    pub fn difference(&self, other: &BoundedPathGrid) -> Result<BoundedPathGrid> {
        if !self.grid.same_nodes(&other.grid) {
            return Err(Error::config("paths live on different grids"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(BoundedPathGrid {
            grid: self.grid,
            values,
            norm_tag: self.norm_tag,
        })
    }
}

fn sup_norm_of(values: &[Vector], norms: &NormFamily) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(k, v)| norms.norm_at(k, v))
        .fold(0.0, f64::max)
}

/// Picard iteration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldConfig {
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            picard_tol: 1e-8,
            picard_max_iter: 200,
        }
    }
}

/// Result of a Picard iteration: the fixed point and the successive sup-norm gaps.
#[derive(Debug, Clone)]
pub struct PicardRun {
    pub path: Vec<Vector>,
    pub iterations: usize,
    pub gaps: Vec<f64>,
}

impl PicardRun {
    /// Largest ratio of successive gaps, ignoring gaps below `floor`.
    pub fn max_gap_ratio(&self, floor: f64) -> f64 {
        self.gaps
            .windows(2)
            .filter(|w| w[0] > floor && w[1] > floor)
            .map(|w| w[1] / w[0])
            .fold(0.0, f64::max)
    }
}

/// The conjugacy H_ω and its inverse G_ω on a grid [τ₀, t_end].
#[derive(Debug, Clone)]
pub struct ConjugacyField {
    sys: SystemSpec,
    omega: MdsShift,
    grid: TimeGrid,
    norms: NormFamily,
    config: FieldConfig,
    a_node: Vec<Mat>,
    a_mid: Vec<Mat>,
}

impl ConjugacyField {
    /// Build a field; requires K·L < α and path coverage of the grid.
    pub fn new(sys: &SystemSpec, omega: &MdsShift, grid: TimeGrid, norms: NormFamily, config: FieldConfig) -> Result<Self> {
        sys.constants().require_topological()?;
        norms.check_grid(&grid)?;
        if !(config.picard_tol > 0.0) || config.picard_max_iter == 0 {
            return Err(Error::config("picard tolerance and iteration cap must be positive"));
        }
        sys.require_coverage(omega, grid.t0(), grid.t_end())?;
        let dynm = sys.dynamics();
        let a_node: Vec<Mat> = grid.times().map(|t| dynm.linear(t, omega)).collect();
        let a_mid: Vec<Mat> = (0..grid.steps())
            .map(|k| dynm.linear(grid.node(k) + 0.5 * grid.dt(), omega))
            .collect();
        Ok(Self {
            sys: sys.clone(),
            omega: omega.clone(),
            grid,
            norms,
            config,
            a_node,
            a_mid,
        })
    }

    /// Field on [τ₀, τ₀ + 12/α] with ambient norms and default Picard settings.
    pub fn standard(sys: &SystemSpec, omega: &MdsShift, tau0: f64, dt: f64) -> Result<Self> {
        let steps = (HORIZON_FACTOR / sys.constants().alpha / dt).ceil() as usize;
        let grid = TimeGrid::from_steps(tau0, dt, steps.max(1))?;
        Self::new(sys, omega, grid, NormFamily::Ambient, FieldConfig::default())
    }

    pub fn system(&self) -> &SystemSpec {
        &self.sys
    }

    pub fn omega(&self) -> &MdsShift {
        &self.omega
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn norms(&self) -> &NormFamily {
        &self.norms
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn constants(&self) -> &HypothesisConstants {
        self.sys.constants()
    }

    pub fn tau0(&self) -> f64 {
        self.grid.t0()
    }

    fn dim(&self) -> usize {
        self.sys.dim()
    }

    /// ‖x‖ at node `k`.
    pub fn norm_at(&self, k: usize, x: &Vector) -> f64 {
        self.norms.norm_at(k, x)
    }

    /// Sup-norm of a path on this field's grid.
    pub fn sup_norm(&self, path: &BoundedPathGrid) -> Result<f64> {
        self.check_path(path)?;
        Ok(path.sup_norm(&self.norms))
    }

    fn check_path(&self, path: &BoundedPathGrid) -> Result<()> {
        if self.grid.same_nodes(path.grid()) {
            Ok(())
        } else {
            Err(Error::config("path grid differs from the field grid"))
        }
    }

    fn wrap(&self, values: Vec<Vector>) -> Result<BoundedPathGrid> {
        BoundedPathGrid::new(self.grid, values, self.norms.tag())
    }

    fn f(&self, t: f64, x: &Vector) -> Vector {
        self.sys.dynamics().nonlinear(t, x, &self.omega)
    }

    /// One RK4 step of ẋ = A x from node `k` toward `k ± 1`.
    fn lin_step(&self, k: usize, forward: bool, x: &Vector) -> Vector {
        let (a0, am, a1, h) = self.step_data(k, forward);
        let k1 = a0 * x;
        let k2 = am * (x + &k1 * (0.5 * h));
        let k3 = am * (x + &k2 * (0.5 * h));
        let k4 = a1 * (x + &k3 * h);
        x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
    }

    /// One RK4 step of the full nonlinear system from node `k` toward `k ± 1`.
    fn nl_step(&self, k: usize, forward: bool, x: &Vector) -> Vector {
        let (a0, am, a1, h) = self.step_data(k, forward);
        let t = self.grid.node(k);
        let tm = t + 0.5 * h;
        let k1 = a0 * x + self.f(t, x);
        let y2 = x + &k1 * (0.5 * h);
        let k2 = am * &y2 + self.f(tm, &y2);
        let y3 = x + &k2 * (0.5 * h);
        let k3 = am * &y3 + self.f(tm, &y3);
        let y4 = x + &k3 * h;
        let k4 = a1 * &y4 + self.f(t + h, &y4);
        x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
    }

    /// One forward RK4 step of ẋ = A x + f with forcing at node, midpoint and next node.
    fn forced_step(&self, k: usize, x: &Vector, f0: &Vector, fm: &Vector, f1: &Vector) -> Vector {
        let h = self.grid.dt();
        let (a0, am, a1) = (&self.a_node[k], &self.a_mid[k], &self.a_node[k + 1]);
        let k1 = a0 * x + f0;
        let k2 = am * (x + &k1 * (0.5 * h)) + fm;
        let k3 = am * (x + &k2 * (0.5 * h)) + fm;
        let k4 = a1 * (x + &k3 * h) + f1;
        x + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
    }

    fn step_data(&self, k: usize, forward: bool) -> (&Mat, &Mat, &Mat, f64) {
        let h = self.grid.dt();
        if forward {
            (&self.a_node[k], &self.a_mid[k], &self.a_node[k + 1], h)
        } else {
            (&self.a_node[k], &self.a_mid[k - 1], &self.a_node[k - 1], -h)
        }
    }

    /// Φ(t_j, τ)ξ on nodes 0..=upto.
    fn linear_path(&self, tau_idx: usize, xi: &Vector, upto: usize) -> Result<Vec<Vector>> {
        let mut out = alloc::vec![Vector::zeros(0); upto + 1];
        let start = tau_idx.min(upto);
        let mut x = xi.clone();
        for k in (start + 1..=tau_idx).rev() {
            x = self.lin_step(k, false, &x);
            flow::guard(&x, self.grid.node(k - 1), k - 1)?;
        }
        out[start] = x.clone();
        for k in (0..start).rev() {
            x = self.lin_step(k + 1, false, &x);
            flow::guard(&x, self.grid.node(k), k)?;
            out[k] = x.clone();
        }
        let mut x = out[start].clone();
        for k in start..upto {
            x = self.lin_step(k, true, &x);
            flow::guard(&x, self.grid.node(k + 1), k + 1)?;
            out[k + 1] = x.clone();
        }
        Ok(out)
    }

    /// ∫_{τ₀}^{t_j} Φ(t_j, s) F(s, ψ(s)) ds on nodes 0..=ψ.len()−1 via the inhomogeneous IVP.
    fn integrate_forcing(&self, psi: &[Vector]) -> Result<Vec<Vector>> {
        let n = self.dim();
        let mids = midpoints(psi);
        let h = self.grid.dt();
        let mut out = Vec::with_capacity(psi.len());
        out.push(Vector::zeros(n));
        let mut f_prev = self.f(self.grid.node(0), &psi[0]);
        for k in 0..psi.len() - 1 {
            let t = self.grid.node(k);
            let fm = self.f(t + 0.5 * h, &mids[k]);
            let f_next = self.f(self.grid.node(k + 1), &psi[k + 1]);
            let y = self.forced_step(k, &out[k], &f_prev, &fm, &f_next);
            flow::guard(&y, self.grid.node(k + 1), k + 1)?;
            out.push(y);
            f_prev = f_next;
        }
        Ok(out)
    }

    /// 𝓛(τ, ξ) = Φ(·, τ)ξ over the grid.
    pub fn op_l(&self, tau: f64, xi: &Vector) -> Result<BoundedPathGrid> {
        self.check_vector(xi)?;
        let idx = self.grid.index_of(tau)?;
        let values = self.linear_path(idx, xi, self.grid.steps())?;
        self.wrap(values)
    }

    /// 𝓕(φ) = ∫_{τ₀}^· Φ(·, s) F(s, φ(s)) ds.
    pub fn op_f(&self, phi: &BoundedPathGrid) -> Result<BoundedPathGrid> {
        self.check_path(phi)?;
        let values = self.integrate_forcing(phi.values())?;
        self.wrap(values)
    }

    fn check_vector(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::config("vector dimension differs from the system"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("vector must be finite"));
        }
        Ok(())
    }

    /// Picard iteration of 𝒯(φ; ξ, τ) = 𝓕(φ + 𝓛(τ, ξ)) restricted to nodes 0..=upto.
    fn picard_upto(&self, tau_idx: usize, xi: &Vector, upto: usize) -> Result<PicardRun> {
        let lin = self.linear_path(tau_idx, xi, upto)?;
        let n = self.dim();
        let mut phi: Vec<Vector> = alloc::vec![Vector::zeros(n); upto + 1];
        let mut gaps = Vec::new();
        for it in 1..=self.config.picard_max_iter {
            let psi: Vec<Vector> = phi.iter().zip(&lin).map(|(p, l)| p + l).collect();
            let next = self.integrate_forcing(&psi)?;
            let gap = next
                .iter()
                .zip(&phi)
                .enumerate()
                .map(|(k, (a, b))| self.norms.norm_at(k, &(a - b)))
                .fold(0.0, f64::max);
            gaps.push(gap);
            phi = next;
            if gap < self.config.picard_tol {
                return Ok(PicardRun {
                    path: phi,
                    iterations: it,
                    gaps,
                });
            }
        }
        Err(Error::NonContraction {
            iterations: self.config.picard_max_iter,
            gap: gaps.last().copied().unwrap_or(f64::NAN),
        })
    }

    /// Picard run over the whole grid with its gap history.
    pub fn picard(&self, tau: f64, xi: &Vector) -> Result<PicardRun> {
        self.check_vector(xi)?;
        let idx = self.grid.index_of(tau)?;
        self.picard_upto(idx, xi, self.grid.steps())
    }

    /// The fixed point φ*_{τ,ω}(ξ).
    pub fn fixed_point(&self, tau: f64, xi: &Vector) -> Result<BoundedPathGrid> {
        let run = self.picard(tau, xi)?;
        self.wrap(run.path)
    }

    /// H(t, ξ) = ξ + φ*_{t,ω}(ξ)(t).
    pub fn h(&self, t: f64, xi: &Vector) -> Result<Vector> {
        self.check_vector(xi)?;
        let k = self.grid.index_of(t)?;
        self.h_at(k, xi)
    }

    fn h_at(&self, k: usize, xi: &Vector) -> Result<Vector> {
        if k == 0 {
            return Ok(xi.clone());
        }
        let run = self.picard_upto(k, xi, k)?;
        Ok(xi + &run.path[k])
    }

    /// G(t, η) = η − ∫_{τ₀}^t Φ(t, s) F(s, φ(s, t, η)) ds with φ(s, t, η) solved backward from t.
    pub fn g(&self, t: f64, eta: &Vector) -> Result<Vector> {
        self.check_vector(eta)?;
        let k = self.grid.index_of(t)?;
        self.g_at(k, eta)
    }

    fn g_at(&self, k: usize, eta: &Vector) -> Result<Vector> {
        if k == 0 {
            return Ok(eta.clone());
        }
        let z = self.backward_orbit(k, eta)?;
        let integral = self.integrate_forcing(&z)?;
        Ok(eta - &integral[k])
    }

    /// φ(t_j, t_k, η) for j = 0..=k.
    fn backward_orbit(&self, k: usize, eta: &Vector) -> Result<Vec<Vector>> {
        let mut z = alloc::vec![Vector::zeros(0); k + 1];
        z[k] = eta.clone();
        for j in (1..=k).rev() {
            let y = self.nl_step(j, false, &z[j]);
            flow::guard(&y, self.grid.node(j - 1), j - 1)?;
            z[j - 1] = y;
        }
        Ok(z)
    }

    /// ‖H(t, Φ(t,s)ξ) − φ(t, s, H(s, ξ))‖_{t,ω}, with Φ and φ from independent integrations.
    pub fn conjugation_residual(&self, s: f64, t: f64, xi: &Vector) -> Result<f64> {
        self.check_vector(xi)?;
        let ks = self.grid.index_of(s)?;
        let kt = self.grid.index_of(t)?;
        if ks > kt {
            return Err(Error::config("conjugation residual needs s ≤ t"));
        }
        let dt = self.grid.dt();
        let (s, t) = (self.grid.node(ks), self.grid.node(kt));
        let lin = flow::transition(&self.sys, &self.omega, t, s, dt)? * xi;
        let left = self.h_at(kt, &lin)?;
        let hs = self.h_at(ks, xi)?;
        let right = flow::flow_map(&self.sys, &self.omega, s, &hs, t, dt)?;
        Ok(self.norm_at(kt, &(left - right)))
    }

    /// D₂G(t, η) = Φ(t, τ₀)·D₃φ(τ₀, t, η).
    pub fn d2g(&self, t: f64, eta: &Vector) -> Result<Mat> {
        self.check_vector(eta)?;
        self.sys.require_derivatives(1)?;
        self.constants().require_smooth()?;
        let k = self.grid.index_of(t)?;
        let dt = self.grid.dt();
        let (t, tau0) = (self.grid.node(k), self.tau0());
        let (_, ders) = variational_map(&self.sys, &self.omega, t, eta, tau0, dt, 1)?;
        let phi = flow::transition(&self.sys, &self.omega, t, tau0, dt)?;
        Ok(phi * ders[0].to_matrix())
    }

    /// Central finite difference of G(t, ·) at η with step `h`.
    pub fn d2g_finite_difference(&self, t: f64, eta: &Vector, h: f64) -> Result<Mat> {
        let n = self.dim();
        let k = self.grid.index_of(t)?;
        let mut out = Mat::zeros(n, n);
        for j in 0..n {
            let mut e = Vector::zeros(n);
            e[j] = h;
            let col = (self.g_at(k, &(eta + &e))? - self.g_at(k, &(eta - &e))?) / (2.0 * h);
            out.set_column(j, &col);
        }
        Ok(out)
    }
}

/// Node values with midpoints from cubic Lagrange interpolation (linear for fewer than four nodes).
fn midpoints(v: &[Vector]) -> Vec<Vector> {
    let len = v.len();
    if len < 2 {
        return Vec::new();
    }
    let segs = len - 1;
    if len < 4 {
        return (0..segs).map(|k| (&v[k] + &v[k + 1]) * 0.5).collect();
    }
    (0..segs)
        .map(|k| {
            if k == 0 {
                (&v[0] * 5.0 + &v[1] * 15.0 - &v[2] * 5.0 + &v[3]) / 16.0
            } else if k == segs - 1 {
                (&v[k - 2] - &v[k - 1] * 5.0 + &v[k] * 15.0 + &v[k + 1] * 5.0) / 16.0
            } else {
                ((&v[k] + &v[k + 1]) * 9.0 - &v[k - 1] - &v[k + 2]) / 16.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
