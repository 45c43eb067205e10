//! Stratonovich SDEs dx = f₀(x)dt + Σ f_i(x)∘dW^i: Heun integration, the Lyapunov
//! spectrum of the linearized SDE, the cohomology that turns the SDE into an RDE and the
//! end-to-end linearization pipeline.

mod cohomology;
mod pipeline;

pub use cohomology::{Cohomology, CohomologyConfig, CohomologyField, InducedRde, Jet};
pub use pipeline::{
    cohomology_residual, linearize_sde, EndToEndProbe, PipelineConfig, PipelineReport, StageCheck,
};

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{self, TrajectoryGrid};
use crate::linalg::{self, Mat, Vector};
use crate::sampling;
use crate::spectrum::{self, LyapunovSpectrum, SpectrumConfig};
use crate::timebase::{MdsShift, TimeGrid};

/// Coefficient fields f₀ (index 0, drift) and f₁ … f_k (diffusions) on flat slices.
pub trait SdeFields: Send + Sync {
    /// State dimension n.
    fn dim(&self) -> usize;

    /// Number k of Wiener components.
    fn noise_dims(&self) -> usize;

    /// f_j(x) into `out`.
    fn field(&self, j: usize, x: &[f64], out: &mut [f64]);

    /// Df_j(x) row-major into `out`; `false` when not supplied.
    fn jacobian(&self, _j: usize, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Matrices B_i with f_i(x) = B_i x for every diffusion, when that holds.
    fn linear_diffusion(&self) -> Option<Vec<Mat>> {
        None
    }

    /// Declared smoothness class C^{m,δ}_b.
    fn smoothness(&self) -> (usize, f64) {
        (2, 1.0)
    }
}

/// Scalar dx = (λx + ε sin x)dt + b x∘dW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarSde {
    pub lambda: f64,
    pub epsilon: f64,
    pub b: f64,
}

impl ScalarSde {
    pub fn new(lambda: f64, epsilon: f64, b: f64) -> Self {
        Self { lambda, epsilon, b }
    }

    /// dx = λx dt + b x∘dW.
    pub fn linear(lambda: f64, b: f64) -> Self {
        Self::new(lambda, 0.0, b)
    }
}

impl SdeFields for ScalarSde {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dims(&self) -> usize {
        1
    }

    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        out[0] = match j {
            0 => self.lambda * x[0] + self.epsilon * x[0].sin(),
            _ => self.b * x[0],
        };
    }

    fn jacobian(&self, j: usize, x: &[f64], out: &mut [f64]) -> bool {
        out[0] = match j {
            0 => self.lambda + self.epsilon * x[0].cos(),
            _ => self.b,
        };
        true
    }

    fn linear_diffusion(&self) -> Option<Vec<Mat>> {
        Some(vec![Mat::from_element(1, 1, self.b)])
    }

    fn smoothness(&self) -> (usize, f64) {
        (usize::MAX, 1.0)
    }
}

/// dx = A x dt + Σ B_i x∘dW^i.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSde {
    pub a: Mat,
    pub b: Vec<Mat>,
}

impl SdeFields for LinearSde {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn noise_dims(&self) -> usize {
        self.b.len()
    }

    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let m = if j == 0 { &self.a } else { &self.b[j - 1] };
        let y = m * Vector::from_column_slice(x);
        out.copy_from_slice(y.as_slice());
    }

    fn jacobian(&self, j: usize, _x: &[f64], out: &mut [f64]) -> bool {
        let m = if j == 0 { &self.a } else { &self.b[j - 1] };
        write_row_major(m, out);
        true
    }

    fn linear_diffusion(&self) -> Option<Vec<Mat>> {
        Some(self.b.clone())
    }

    fn smoothness(&self) -> (usize, f64) {
        (usize::MAX, 1.0)
    }
}

fn write_row_major(m: &Mat, out: &mut [f64]) {
    let n = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
}

fn from_row_major(n: usize, data: &[f64]) -> Mat {
    Mat::from_row_slice(n, n, data)
}

/// Radius of the ball on which linear growth is probed.
const GROWTH_RADIUS: f64 = 10.0;
const GROWTH_SEED: u64 = 0x6072;

/// A validated Stratonovich SDE with f_i(0) = 0.
#[derive(Clone)]
pub struct SdeSystem {
    name: String,
    fields: Arc<dyn SdeFields>,
    growth: f64,
}

impl core::fmt::Debug for SdeSystem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SdeSystem")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("noise_dims", &self.noise_dims())
            .field("growth", &self.growth)
            .finish()
    }
}

impl SdeSystem {
    /// Check f_i(0) = 0 and record sup ‖f_i(x)‖/(1 + ‖x‖) over a probe ball.
    pub fn new(name: impl Into<String>, fields: Arc<dyn SdeFields>) -> Result<Self> {
        let n = fields.dim();
        if n == 0 {
            return Err(Error::config("state dimension must be at least 1"));
        }
        let k = fields.noise_dims();
        if let Some(b) = fields.linear_diffusion() {
            if b.len() != k || b.iter().any(|m| m.nrows() != n || m.ncols() != n) {
                return Err(Error::config("linear diffusion matrices have the wrong shape"));
            }
        }
        let mut out = vec![0.0; n];
        let zero = vec![0.0; n];
        for j in 0..=k {
            fields.field(j, &zero, &mut out);
            if !(out.iter().map(|x| x * x).sum::<f64>().sqrt() <= 1e-12) {
                return Err(Error::config(format!("coefficient f_{j} must vanish at the origin")));
            }
        }
        let mut growth: f64 = 0.0;
        for x in sampling::ball_points(GROWTH_SEED, 200, n, GROWTH_RADIUS) {
            for j in 0..=k {
                fields.field(j, x.as_slice(), &mut out);
                let v = out.iter().map(|y| y * y).sum::<f64>().sqrt() / (1.0 + x.norm());
                if !v.is_finite() {
                    return Err(Error::config(format!("coefficient f_{j} is not finite on the probe ball")));
                }
                growth = growth.max(v);
            }
        }
        Ok(Self {
            name: name.into(),
            fields,
            growth,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.fields.dim()
    }

    pub fn noise_dims(&self) -> usize {
        self.fields.noise_dims()
    }

    pub fn fields(&self) -> &Arc<dyn SdeFields> {
        &self.fields
    }

    /// Probed linear-growth constant.
    pub fn growth(&self) -> f64 {
        self.growth
    }

    /// Df_j(x) row-major, by central differences with step 1e−5·(1 + ‖x‖) when not supplied.
    pub fn jacobian_into(&self, j: usize, x: &[f64], out: &mut [f64]) {
        if self.fields.jacobian(j, x, out) {
            return;
        }
        let n = x.len();
        let h = 1e-5 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for c in 0..n {
            xp[c] = x[c] + h;
            self.fields.field(j, &xp, &mut fp);
            xp[c] = x[c] - h;
            self.fields.field(j, &xp, &mut fm);
            xp[c] = x[c];
            for r in 0..n {
                out[r * n + c] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
    }

    pub fn jacobian(&self, j: usize, x: &Vector) -> Mat {
        let n = self.dim();
        let mut out = vec![0.0; n * n];
        self.jacobian_into(j, x.as_slice(), &mut out);
        from_row_major(n, &out)
    }

    pub fn field(&self, j: usize, x: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim());
        self.fields.field(j, x.as_slice(), out.as_mut_slice());
        out
    }

    /// The linearization dv = Df₀(0)v dt + Σ Df_i(0)v∘dW^i.
    pub fn linear_part(&self) -> SdeSystem {
        let zero = Vector::zeros(self.dim());
        let lin = LinearSde {
            a: self.jacobian(0, &zero),
            b: (1..=self.noise_dims()).map(|i| self.jacobian(i, &zero)).collect(),
        };
        Self {
            name: format!("{}-linear", self.name),
            growth: self.growth,
            fields: Arc::new(lin),
        }
    }
}

/// Increments W^i(u + h) − W^i(u) of the shifted path for each component.
fn increments(omega: &MdsShift, k: usize, u: f64, h: f64, out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(k) {
        *o = omega.value(i, u + h) - omega.value(i, u);
    }
}

/// One Heun step y ← y + ½(G(s, y) + G(s + h, ȳ)), ȳ = y + G(s, y), where G(s, y) writes the
/// full increment (drift·h + Σ diffusion·ΔW) into its output.
fn heun_step<G: FnMut(f64, &[f64], &mut [f64])>(g: &mut G, s: f64, h: f64, y: &mut [f64], k1: &mut [f64], k2: &mut [f64], pred: &mut [f64]) {
    g(s, y, k1);
    for i in 0..y.len() {
        pred[i] = y[i] + k1[i];
    }
    g(s + h, pred, k2);
    for i in 0..y.len() {
        y[i] += 0.5 * (k1[i] + k2[i]);
    }
}

fn slice_guard(y: &[f64], t: f64, node: usize) -> Result<()> {
    let n = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n.is_finite() && n <= flow::DIVERGENCE_GUARD {
        Ok(())
    } else {
        Err(Error::Divergence { t, node, norm: n })
    }
}

/// Heun scheme for the Stratonovich SDE on the nodes of `window`, started at `x0` at `window.t0()`.
///
/// Increments are taken from the path by linear interpolation at the window nodes, so they are
/// exact sums of path increments when the window step is a multiple of the path step.
pub fn heun_stratonovich(sys: &SdeSystem, omega: &MdsShift, x0: &Vector, window: &TimeGrid) -> Result<TrajectoryGrid> {
    if x0.len() != sys.dim() {
        return Err(Error::config("initial state has the wrong dimension"));
    }
    omega.require(window.t0(), window.t_end())?;
    if sys.noise_dims() > omega.dims() {
        return Err(Error::config("path has fewer Wiener components than the SDE"));
    }
    let n = sys.dim();
    let k = sys.noise_dims();
    let h = window.dt();
    let fields = sys.fields().clone();
    let mut dw = vec![0.0; k];
    let mut tmp = vec![0.0; n];
    let mut states = Vec::with_capacity(window.len());
    let mut y = x0.as_slice().to_vec();
    let (mut k1, mut k2, mut pred) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    states.push(x0.clone());
    for step in 0..window.steps() {
        let s = window.node(step);
        increments(omega, k, s, h, &mut dw);
        let mut g = |_s: f64, x: &[f64], out: &mut [f64]| {
            fields.field(0, x, out);
            for v in out.iter_mut() {
                *v *= h;
            }
            for (i, w) in dw.iter().enumerate() {
                fields.field(i + 1, x, &mut tmp);
                for (o, t) in out.iter_mut().zip(&tmp) {
                    *o += t * w;
                }
            }
        };
        heun_step(&mut g, s, h, &mut y, &mut k1, &mut k2, &mut pred);
        slice_guard(&y, window.node(step + 1), step + 1)?;
        states.push(Vector::from_column_slice(&y));
    }
    Ok(TrajectoryGrid::from_parts(*window, states, (window.t0(), x0.clone())))
}

/// ψ_sde(t, ω, x) by Heun with step `dt`.
pub fn sde_flow(sys: &SdeSystem, omega: &MdsShift, x: &Vector, t: f64, dt: f64) -> Result<Vector> {
    if t == 0.0 {
        return Ok(x.clone());
    }
    let grid = TimeGrid::new(0.0, t, dt)?;
    Ok(heun_stratonovich(sys, omega, x, &grid)?.last().clone())
}

/// Lyapunov spectrum of the linearized SDE by Heun steps of the fundamental matrix with QR
/// re-orthonormalization, over `[0, horizon]` with step `dt`.
pub fn lyapunov_sde(sys: &SdeSystem, omega: &MdsShift, horizon: f64, dt: f64, config: &SpectrumConfig) -> Result<LyapunovSpectrum> {
    if !(horizon > 0.0) || !(config.qr_interval > 0.0) || !(config.cluster_tol > 0.0) {
        return Err(Error::config("horizon, qr_interval and cluster_tol must be positive"));
    }
    omega.require(0.0, horizon)?;
    let lin = sys.linear_part();
    let n = lin.dim();
    let k = lin.noise_dims();
    let zero = Vector::zeros(n);
    let a = lin.jacobian(0, &zero);
    let b: Vec<Mat> = (1..=k).map(|i| lin.jacobian(i, &zero)).collect();
    let steps = flow::step_count(0.0, horizon, dt)?;
    let per_qr = ((config.qr_interval / dt).round() as usize).max(1);
    let frame = match &config.frame {
        Some(f) if f.nrows() == n && f.ncols() == n => linalg::orthonormal_basis(f),
        Some(_) => return Err(Error::config("initial frame has the wrong shape")),
        None => spectrum::generic_frame(n),
    };
    let mut dw = vec![0.0; k];
    let early_step = (3 * steps) / 4;
    let mut sums = vec![0.0; n];
    let mut early = None;
    let mut rs = Vec::new();
    let mut y = frame.clone();
    let mut j = 0;
    while j < steps {
        let block = per_qr.min(steps - j);
        for i in 0..block {
            let s = (j + i) as f64 * dt;
            increments(omega, k, s, dt, &mut dw);
            let incr = |m: &Mat| {
                let mut out = &a * m * dt;
                for (bi, w) in b.iter().zip(&dw) {
                    out += bi * m * *w;
                }
                out
            };
            let k1 = incr(&y);
            let k2 = incr(&(&y + &k1));
            y += (k1 + k2) * 0.5;
        }
        j += block;
        flow::guard(&y, j as f64 * dt, j)?;
        let (q, r) = spectrum::signed_qr(y);
        for (i, s) in sums.iter_mut().enumerate() {
            *s += r[(i, i)].ln();
        }
        rs.push(r);
        y = q;
        if early.is_none() && j >= early_step {
            let te = j as f64 * dt;
            early = Some(sums.iter().map(|s| s / te).collect::<Vec<f64>>());
        }
    }
    let raw: Vec<f64> = sums.iter().map(|s| s / horizon).collect();
    if raw.iter().any(|x| !x.is_finite()) {
        return Err(Error::EstimationUncertainty {
            reason: format!("non-finite exponent estimate"),
            partial: None,
        });
    }
    let raw_early = early.unwrap_or_else(|| raw.clone());
    spectrum::finish_spectrum(
        spectrum::QrRun {
            raw,
            raw_early,
            rs,
            frame,
            horizon,
        },
        config,
    )
}

#[cfg(test)]
mod tests;
