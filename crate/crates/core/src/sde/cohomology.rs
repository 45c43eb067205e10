//! The stationary flow Φ_t(x, τ), the cohomology H, its drift correction Γ and the induced RDE.
//!
//! With Z_s = Φ_s(y, τ) solving dZ = e^{s−τ} Σ f_i(Z)∘dW^i from Z = y in the far past,
//! H(θ_t ω, y) = Z_t at τ = t and Γ(θ_t ω, y) = ∂_τ Z_t at τ = t. Then x_t = H(θ_t ω, y_t)
//! solves the SDE iff ẏ = DH⁻¹[f₀(H(y)) − Γ(y)].

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use super::{from_row_major, slice_guard, write_row_major, SdeSystem};
use crate::error::{Error, Result};
use crate::flow::{Dynamics, HypothesisConstants, SystemSpec};
use crate::linalg::{Mat, Vector};
use crate::timebase::{MdsShift, NoisePath};

/// History truncation and inversion settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CohomologyConfig {
    /// Integrals over (−∞, t] start at t − t_hist.
    pub t_hist: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Central-difference step for derivatives of Γ in y.
    pub fd_step: f64,
}

impl Default for CohomologyConfig {
    fn default() -> Self {
        Self {
            t_hist: 20.0,
            newton_tol: 1e-12,
            newton_max_iter: 50,
            fd_step: 1e-5,
        }
    }
}

/// H, DH and Γ at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub h: Vector,
    pub dh: Mat,
    pub gamma: Vector,
}

/// For linear diffusions H(θ_t ω, y) = M_t y and Γ(θ_t ω, y) = N_t y.
#[derive(Debug, Clone)]
struct LinearJet {
    m: Mat,
    m_inv: Mat,
    n: Mat,
    /// Dg(θ_t ω, 0) = M⁻¹(Df₀(0)M − N).
    a: Mat,
}

#[derive(Debug, Clone)]
struct JetTable {
    base: Arc<NoisePath>,
    /// Half-position index of the first entry.
    q0: i64,
    entries: Vec<LinearJet>,
}

fn matmul(a: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// Evaluator of the cohomology for any shift of a path.
#[derive(Clone)]
pub struct Cohomology {
    sys: SdeSystem,
    config: CohomologyConfig,
    /// Row-major B_i when every diffusion is linear.
    linear: Option<Vec<Vec<f64>>>,
    df0: Mat,
    table: Option<Arc<JetTable>>,
}

impl core::fmt::Debug for Cohomology {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Cohomology")
            .field("sys", &self.sys)
            .field("config", &self.config)
            .field("linear", &self.linear.is_some())
            .field("tabulated", &self.table.is_some())
            .finish()
    }
}

impl Cohomology {
    pub fn new(sys: &SdeSystem, config: CohomologyConfig) -> Result<Self> {
        if !(config.t_hist > 0.0) || !(config.newton_tol > 0.0) || config.newton_max_iter == 0 || !(config.fd_step > 0.0) {
            return Err(Error::config("t_hist, newton_tol, newton_max_iter and fd_step must be positive"));
        }
        let n = sys.dim();
        let linear = sys.fields().linear_diffusion().map(|bs| {
            bs.iter()
                .map(|b| {
                    let mut v = vec![0.0; n * n];
                    write_row_major(b, &mut v);
                    v
                })
                .collect()
        });
        Ok(Self {
            sys: sys.clone(),
            config,
            linear,
            df0: sys.jacobian(0, &Vector::zeros(n)),
            table: None,
        })
    }

    pub fn system(&self) -> &SdeSystem {
        &self.sys
    }

    pub fn config(&self) -> &CohomologyConfig {
        &self.config
    }

    /// e^{−t_hist}, the relative weight of the truncated history.
    pub fn truncation_bias(&self) -> f64 {
        (-self.config.t_hist).exp()
    }

    fn steps(&self, h: f64) -> usize {
        ((self.config.t_hist / h).round() as usize).max(1)
    }

    /// Heun march of dy = e^{s−τ} Σ G_i(y) dW^i over [t − t_hist, t]; `g(y, w, dw, out)` writes
    /// the increment w Σ G_i(y) dW^i.
    fn march<G: FnMut(&[f64], f64, &[f64], &mut [f64])>(&self, omega: &MdsShift, t: f64, tau: f64, y: &mut [f64], mut g: G) -> Result<()> {
        let h = omega.dt();
        let steps = self.steps(h);
        let lo = t - steps as f64 * h;
        omega.require(lo, t)?;
        let k = self.sys.noise_dims();
        if k > omega.dims() {
            return Err(Error::config("path has fewer Wiener components than the SDE"));
        }
        let base = omega.base();
        let raw = omega.position(t);
        let snapped = (2.0 * raw).round() * 0.5;
        let p_end = if (raw - snapped).abs() < 1e-6 { snapped } else { raw };
        let shift = t - tau;
        let m = y.len();
        let (mut k1, mut k2, mut pred) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let mut dw = vec![0.0; k];
        for j in 0..steps {
            let back = (steps - j) as f64;
            let p0 = p_end - back;
            for (c, d) in dw.iter_mut().enumerate() {
                *d = base.value_at_position(c, p0 + 1.0) - base.value_at_position(c, p0);
            }
            let w0 = (shift - back * h).exp();
            let w1 = (shift - (back - 1.0) * h).exp();
            g(y, w0, &dw, &mut k1);
            for i in 0..m {
                pred[i] = y[i] + k1[i];
            }
            g(&pred, w1, &dw, &mut k2);
            for i in 0..m {
                y[i] += 0.5 * (k1[i] + k2[i]);
            }
        }
        slice_guard(y, t, steps)
    }

    /// Φ_t(x, τ) along `omega`.
    pub fn stationary_flow(&self, omega: &MdsShift, x: &Vector, tau: f64, t: f64) -> Result<Vector> {
        self.check(x)?;
        let fields = self.sys.fields().clone();
        let n = self.sys.dim();
        let mut tmp = vec![0.0; n];
        let mut y = x.as_slice().to_vec();
        self.march(omega, t, tau, &mut y, |z, w, dw, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (i, d) in dw.iter().enumerate() {
                fields.field(i + 1, z, &mut tmp);
                for (o, v) in out.iter_mut().zip(&tmp) {
                    *o += w * d * v;
                }
            }
        })?;
        Ok(Vector::from_column_slice(&y))
    }

    fn check(&self, x: &Vector) -> Result<()> {
        if x.len() != self.sys.dim() {
            return Err(Error::config("vector dimension differs from the SDE"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("vector must be finite"));
        }
        Ok(())
    }

    /// (M_t, N_t) by Heun integration of dM = w Σ B_i M dW, dN = w Σ B_i(N − M) dW.
    fn linear_jet_direct(&self, omega: &MdsShift, t: f64) -> Result<LinearJet> {
        let bs = self.linear.as_ref().ok_or_else(|| Error::config("diffusion is not linear"))?;
        let n = self.sys.dim();
        let nn = n * n;
        let mut y = vec![0.0; 2 * nn];
        for i in 0..n {
            y[i * n + i] = 1.0;
        }
        let mut tmp = vec![0.0; nn];
        let mut diff = vec![0.0; nn];
        self.march(omega, t, t, &mut y, |z, w, dw, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            let (mm, nm) = z.split_at(nn);
            for i in 0..nn {
                diff[i] = nm[i] - mm[i];
            }
            for (b, d) in bs.iter().zip(dw) {
                let c = w * d;
                matmul(b, mm, n, &mut tmp);
                for i in 0..nn {
                    out[i] += c * tmp[i];
                }
                matmul(b, &diff, n, &mut tmp);
                for i in 0..nn {
                    out[nn + i] += c * tmp[i];
                }
            }
        })?;
        let m = from_row_major(n, &y[..nn]);
        let nmat = from_row_major(n, &y[nn..]);
        let m_inv = m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateCohomology(format!("DH is singular at t = {t}")))?;
        let a = &m_inv * (&self.df0 * &m - &nmat);
        Ok(LinearJet { m, m_inv, n: nmat, a })
    }

    fn linear_jet(&self, omega: &MdsShift, t: f64) -> Result<LinearJet> {
        if let Some(table) = &self.table {
            if Arc::ptr_eq(&table.base, omega.base()) {
                let p2 = 2.0 * omega.position(t);
                let q = p2.round();
                if (p2 - q).abs() < 1e-6 {
                    let i = q as i64 - table.q0;
                    if i >= 0 && (i as usize) < table.entries.len() {
                        return Ok(table.entries[i as usize].clone());
                    }
                }
            }
        }
        self.linear_jet_direct(omega, t)
    }

    /// Precompute the linear-diffusion jets at every half node of base times `[lo, hi]`.
    /// Has no effect for nonlinear diffusions.
    pub fn tabulate(&mut self, base: &Arc<NoisePath>, lo: f64, hi: f64) -> Result<()> {
        if self.linear.is_none() {
            return Ok(());
        }
        let omega = MdsShift::new(base.clone());
        let dt = base.grid().dt();
        let q_lo = (2.0 * omega.position(lo)).floor() as i64;
        let q_hi = (2.0 * omega.position(hi)).ceil() as i64;
        let origin = base.origin() as f64;
        let mut entries = Vec::with_capacity((q_hi - q_lo + 1).max(0) as usize);
        for q in q_lo..=q_hi {
            let t = (q as f64 * 0.5 - origin) * dt;
            entries.push(self.linear_jet_direct(&omega, t)?);
        }
        self.table = Some(Arc::new(JetTable {
            base: base.clone(),
            q0: q_lo,
            entries,
        }));
        Ok(())
    }

    /// H(θ_t ω, y) = Φ_t(y, t).
    pub fn h(&self, omega: &MdsShift, t: f64, y: &Vector) -> Result<Vector> {
        if self.linear.is_some() {
            self.check(y)?;
            return Ok(self.linear_jet(omega, t)?.m * y);
        }
        self.stationary_flow(omega, y, t, t)
    }

    /// H, DH and Γ at (θ_t ω, y).
    pub fn jet(&self, omega: &MdsShift, t: f64, y: &Vector) -> Result<Jet> {
        self.check(y)?;
        if self.linear.is_some() {
            let lj = self.linear_jet(omega, t)?;
            return Ok(Jet {
                h: &lj.m * y,
                gamma: &lj.n * y,
                dh: lj.m,
            });
        }
        let n = self.sys.dim();
        let nn = n * n;
        let sys = self.sys.clone();
        let fields = sys.fields().clone();
        let mut y0 = vec![0.0; n + nn + n];
        y0[..n].copy_from_slice(y.as_slice());
        for i in 0..n {
            y0[n + i * n + i] = 1.0;
        }
        let mut f = vec![0.0; n];
        let mut jac = vec![0.0; nn];
        let mut tmp = vec![0.0; nn];
        let mut jk = vec![0.0; n];
        self.march(omega, t, t, &mut y0, |st, w, dw, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            let z = &st[..n];
            let d = &st[n..n + nn];
            let kk = &st[n + nn..];
            for (i, dwi) in dw.iter().enumerate() {
                let c = w * dwi;
                fields.field(i + 1, z, &mut f);
                sys.jacobian_into(i + 1, z, &mut jac);
                matmul(&jac, d, n, &mut tmp);
                crate::linalg::row_major_apply(&jac, kk, &mut jk);
                for r in 0..n {
                    out[r] += c * f[r];
                    out[n + nn + r] += c * (jk[r] - f[r]);
                }
                for r in 0..nn {
                    out[n + r] += c * tmp[r];
                }
            }
        })?;
        Ok(Jet {
            h: Vector::from_column_slice(&y0[..n]),
            dh: from_row_major(n, &y0[n..n + nn]),
            gamma: Vector::from_column_slice(&y0[n + nn..]),
        })
    }

    /// Γ(θ_t ω, y).
    pub fn gamma(&self, omega: &MdsShift, t: f64, y: &Vector) -> Result<Vector> {
        Ok(self.jet(omega, t, y)?.gamma)
    }

    /// H(θ_t ω, ·)⁻¹(x) by damped Newton iteration seeded at x.
    pub fn h_inverse(&self, omega: &MdsShift, t: f64, x: &Vector) -> Result<Vector> {
        self.check(x)?;
        if self.linear.is_some() {
            return Ok(self.linear_jet(omega, t)?.m_inv * x);
        }
        let tol = self.config.newton_tol * (1.0 + x.norm());
        let mut y = x.clone();
        let mut jet = self.jet(omega, t, &y)?;
        let mut res = (&jet.h - x).norm();
        for _ in 0..self.config.newton_max_iter {
            if res <= tol {
                return Ok(y);
            }
            let step = jet
                .dh
                .clone()
                .lu()
                .solve(&(&jet.h - x))
                .ok_or_else(|| Error::DegenerateCohomology(format!("DH is singular during inversion at t = {t}")))?;
            let mut lambda = 1.0;
            loop {
                let cand = &y - &step * lambda;
                let cj = self.jet(omega, t, &cand)?;
                let cr = (&cj.h - x).norm();
                if cr < res || lambda < 1e-3 {
                    y = cand;
                    jet = cj;
                    res = cr;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if res <= tol {
            Ok(y)
        } else {
            Err(Error::OutOfRegime {
                iterations: self.config.newton_max_iter,
                residual: res,
            })
        }
    }

    /// g(θ_t ω, y) = DH⁻¹[f₀(H(y)) − Γ(y)].
    pub fn g(&self, omega: &MdsShift, t: f64, y: &Vector) -> Result<Vector> {
        if self.linear.is_some() {
            self.check(y)?;
            let lj = self.linear_jet(omega, t)?;
            let f0 = self.sys.field(0, &(&lj.m * y));
            return Ok(&lj.m_inv * (f0 - &lj.n * y));
        }
        let jet = self.jet(omega, t, y)?;
        let rhs = self.sys.field(0, &jet.h) - &jet.gamma;
        jet.dh
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::DegenerateCohomology(format!("DH is singular at t = {t}")))
    }

    /// Dg(θ_t ω, 0) = DH(0)⁻¹[Df₀(0)DH(0) − DΓ(0)].
    pub fn dg_zero(&self, omega: &MdsShift, t: f64) -> Result<Mat> {
        if self.linear.is_some() {
            return Ok(self.linear_jet(omega, t)?.a);
        }
        let n = self.sys.dim();
        let zero = Vector::zeros(n);
        let jet = self.jet(omega, t, &zero)?;
        let h = self.config.fd_step;
        let mut dgamma = Mat::zeros(n, n);
        for c in 0..n {
            let mut e = Vector::zeros(n);
            e[c] = h;
            let col = (self.gamma(omega, t, &e)? - self.gamma(omega, t, &(-&e))?) / (2.0 * h);
            dgamma.set_column(c, &col);
        }
        let inv = jet
            .dh
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateCohomology(format!("DH is singular at t = {t}")))?;
        Ok(inv * (&self.df0 * &jet.dh - dgamma))
    }

    /// The RDE ẏ = g(θ_t ω, y) as a system; L and M are undeclared (`f64::MAX`).
    pub fn induced_system(&self) -> Result<SystemSpec> {
        let constants = HypothesisConstants::new(1.0, 1.0, f64::MAX, f64::MAX)?;
        SystemSpec::new(
            format!("{}-rde", self.sys.name()),
            Arc::new(InducedRde { engine: self.clone() }),
            constants,
        )
    }
}

/// The cohomology at a fixed path ω.
#[derive(Debug, Clone)]
pub struct CohomologyField {
    engine: Cohomology,
    omega: MdsShift,
}

impl CohomologyField {
    pub fn new(sys: &SdeSystem, omega: &MdsShift, config: CohomologyConfig) -> Result<Self> {
        let engine = Cohomology::new(sys, config)?;
        omega.require(-config.t_hist, 0.0)?;
        Ok(Self {
            engine,
            omega: omega.clone(),
        })
    }

    pub fn from_engine(engine: Cohomology, omega: &MdsShift) -> Self {
        Self {
            engine,
            omega: omega.clone(),
        }
    }

    pub fn engine(&self) -> &Cohomology {
        &self.engine
    }

    pub fn omega(&self) -> &MdsShift {
        &self.omega
    }

    /// Φ_t(x, τ).
    pub fn stationary_flow(&self, x: &Vector, tau: f64, t: f64) -> Result<Vector> {
        self.engine.stationary_flow(&self.omega, x, tau, t)
    }

    /// H₀(ω, x) = Φ₀(x, 0).
    pub fn h0(&self, x: &Vector) -> Result<Vector> {
        self.engine.h(&self.omega, 0.0, x)
    }

    /// Γ₀(ω, x).
    pub fn gamma0(&self, x: &Vector) -> Result<Vector> {
        self.engine.gamma(&self.omega, 0.0, x)
    }

    /// DH₀(ω, x).
    pub fn jacobian(&self, x: &Vector) -> Result<Mat> {
        Ok(self.engine.jet(&self.omega, 0.0, x)?.dh)
    }

    pub fn h0_inverse(&self, x: &Vector) -> Result<Vector> {
        self.engine.h_inverse(&self.omega, 0.0, x)
    }

    /// g(ω, y).
    pub fn g(&self, y: &Vector) -> Result<Vector> {
        self.engine.g(&self.omega, 0.0, y)
    }

    pub fn truncation_bias(&self) -> f64 {
        self.engine.truncation_bias()
    }
}

/// ẏ = g(θ_t ω, y) with linear part Dg(θ_t ω, 0). Evaluation failures surface as NaN, which
/// the integrators report as divergence.
#[derive(Clone)]
pub struct InducedRde {
    engine: Cohomology,
}

impl InducedRde {
    pub fn new(engine: Cohomology) -> Self {
        Self { engine }
    }

    fn nan(&self) -> Vector {
        Vector::from_element(self.engine.sys.dim(), f64::NAN)
    }
}

impl Dynamics for InducedRde {
    fn dim(&self) -> usize {
        self.engine.sys.dim()
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        let n = self.dim();
        self.engine
            .dg_zero(omega, t)
            .unwrap_or_else(|_| Mat::from_element(n, n, f64::NAN))
    }

    fn nonlinear(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        match self.engine.g(omega, t, x) {
            Ok(g) => g - self.linear(t, omega) * x,
            Err(_) => self.nan(),
        }
    }

    fn rhs(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        self.engine.g(omega, t, x).unwrap_or_else(|_| self.nan())
    }

    fn history(&self) -> f64 {
        self.engine.config.t_hist
    }

    fn noise_dims(&self) -> usize {
        self.engine.sys.noise_dims()
    }
}
