//! The adapted random norm |x|_ω as a quadratic form, its family along an
//! orbit, and weighted operator norms.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use super::{lyapunov_qr, LyapunovSpectrum, SpectrumConfig};
use crate::error::{Error, Result};
use crate::flow::{self, evolution_operator, SystemSpec};
use crate::linalg::{self, Mat, Vector};
use crate::timebase::{MdsShift, TimeGrid};

/// A norm |x| = ‖R x‖ given by an upper-triangular Gram factor R.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticNorm {
    factor: Mat,
}

impl QuadraticNorm {
    /// From a Gram matrix; fails unless it is positive definite.
    pub fn from_gram(gram: &Mat) -> Result<Self> {
        let factor = linalg::gram_factor(gram).ok_or_else(|| Error::DegenerateNorm(format!("Gram matrix is not positive definite")))?;
        Ok(Self { factor })
    }

    /// The Euclidean norm in dimension `n`.
    pub fn euclidean(n: usize) -> Self {
        Self {
            factor: Mat::identity(n, n),
        }
    }

    pub fn factor(&self) -> &Mat {
        &self.factor
    }

    pub fn gram(&self) -> Mat {
        self.factor.transpose() * &self.factor
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        (&self.factor * x).norm()
    }

    /// Smallest B ≥ 1 with ‖x‖/B ≤ |x| ≤ B‖x‖.
    pub fn equivalence(&self) -> f64 {
        let hi = linalg::spectral_norm(&self.factor);
        let lo = linalg::min_singular(&self.factor);
        hi.max(1.0 / lo).max(1.0)
    }

    fn inverse_factor(&self) -> Result<Mat> {
        let n = self.factor.nrows();
        let d = self.factor.diagonal();
        if d.iter().any(|x| !(x.abs() > 1e-300)) {
            return Err(Error::DegenerateNorm(format!("singular Gram factor")));
        }
        self.factor
            .solve_upper_triangular(&Mat::identity(n, n))
            .ok_or_else(|| Error::DegenerateNorm(format!("singular Gram factor")))
    }
}

/// sup_{|x|_s = 1} |T x|_t, the largest singular value of R_t T R_s⁻¹.
pub fn weighted_operator_norm(t_op: &Mat, norm_s: &QuadraticNorm, norm_t: &QuadraticNorm) -> Result<f64> {
    let n = t_op.nrows();
    if norm_s.factor.nrows() != t_op.ncols() || norm_t.factor.nrows() != n {
        return Err(Error::config("operator and norms have different dimensions"));
    }
    let inv = norm_s.inverse_factor()?;
    Ok(linalg::spectral_norm(&(norm_t.factor() * t_op * inv)))
}

/// Quadrature parameters of the adapted norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NormConfig {
    /// Upper limit replacing ∞; default 9.2/a.
    pub trunc_t: Option<f64>,
    /// Trapezoid step on `[0, trunc_T]`.
    pub quad_dt: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            trunc_t: None,
            quad_dt: 1e-2,
        }
    }
}

impl NormConfig {
    /// Truncation horizon for gap `a`, rounded up to a whole number of steps `dt`.
    pub fn horizon(&self, gap: f64, dt: f64) -> f64 {
        let t = self.trunc_t.unwrap_or(9.2 / gap);
        (t / dt).ceil() * dt
    }
}

/// Orthogonal projectors onto W_i = V_i ⊖ V_{i+1}.
fn class_projectors(subspaces: &[Mat]) -> Vec<Mat> {
    let n = subspaces[0].nrows();
    (0..subspaces.len())
        .map(|i| {
            let small = subspaces.get(i + 1).cloned().unwrap_or_else(|| Mat::zeros(n, 0));
            linalg::projector(&linalg::complement_in(&subspaces[i], &small))
        })
        .collect()
}

/// The adapted norm |·|_ω at a single ω.
#[derive(Debug, Clone)]
pub struct AdaptedNorm {
    spectrum: LyapunovSpectrum,
    trunc_t: f64,
    quad_dt: f64,
    norm: QuadraticNorm,
    equivalence: f64,
    fallback: bool,
}

impl AdaptedNorm {
    /// |x|²_ω = Σ_i ∫₀^T ‖Φ(t,ω)xⁱ‖² e^{−2(λ_i+a)t} dt with xⁱ the component in V_i ⊖ V_{i+1}.
    pub fn build(sys: &SystemSpec, omega: &MdsShift, spectrum: &LyapunovSpectrum, config: &NormConfig) -> Result<Self> {
        spectrum.validate()?;
        let n = sys.dim();
        if spectrum.dim() != n {
            return Err(Error::config("spectrum dimension differs from the system"));
        }
        if spectrum.exponents.len() > 1 && !spectrum.has_filtration() {
            return Ok(Self::ambient(spectrum, n));
        }
        let dt = config.quad_dt;
        let trunc_t = config.horizon(spectrum.gap, dt);
        let grid = TimeGrid::new(0.0, trunc_t, dt)?;
        let evo = evolution_operator(sys, omega, 0.0, &grid)?;
        let projectors = if spectrum.exponents.len() == 1 {
            alloc::vec![Mat::identity(n, n)]
        } else {
            class_projectors(&spectrum.subspaces)
        };
        let mut gram = Mat::zeros(n, n);
        for (i, p) in projectors.iter().enumerate() {
            let c = spectrum.exponents[i] + spectrum.gap;
            let mut g = Mat::zeros(n, n);
            let mut prev: Option<Mat> = None;
            for (k, phi) in evo.matrices().iter().enumerate() {
                let t = grid.node(k);
                let cur = phi.transpose() * phi * (-2.0 * c * t).exp();
                if let Some(p0) = prev {
                    g += (p0 + &cur) * (0.5 * (t - grid.node(k - 1)));
                }
                prev = Some(cur);
            }
            gram += p * g * p;
        }
        let norm = QuadraticNorm::from_gram(&gram)?;
        let equivalence = norm.equivalence();
        Ok(Self {
            spectrum: spectrum.clone(),
            trunc_t,
            quad_dt: dt,
            norm,
            equivalence,
            fallback: false,
        })
    }

    /// Ambient fallback used when estimation failed at this ω.
    pub fn ambient(spectrum: &LyapunovSpectrum, n: usize) -> Self {
        Self {
            spectrum: spectrum.clone(),
            trunc_t: 0.0,
            quad_dt: 0.0,
            norm: QuadraticNorm::euclidean(n),
            equivalence: 1.0,
            fallback: true,
        }
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        self.norm.eval(x)
    }

    pub fn quadratic(&self) -> &QuadraticNorm {
        &self.norm
    }

    pub fn spectrum(&self) -> &LyapunovSpectrum {
        &self.spectrum
    }

    pub fn trunc_t(&self) -> f64 {
        self.trunc_t
    }

    pub fn quad_dt(&self) -> f64 {
        self.quad_dt
    }

    /// Equivalence constant B(ω).
    pub fn equivalence(&self) -> f64 {
        self.equivalence
    }

    pub fn is_fallback(&self) -> bool {
        self.fallback
    }
}

/// Evaluate |x|_ω.
pub fn adapted_norm_eval(norm: &AdaptedNorm, x: &Vector) -> f64 {
    norm.eval(x)
}

/// The adapted norms |·|_{θ_t ω} at every node of a grid.
///
/// The per-class Gram matrices solve −Ġ = AᵀG + GA − 2(λ_i + a)G + I backward
/// from G = 0 at `t_end + trunc_T`; V_i(θ_t ω) = Φ(t, t₀)V_i(θ_{t₀} ω).
#[derive(Debug, Clone)]
pub struct AdaptedNormFamily {
    grid: TimeGrid,
    norms: Vec<QuadraticNorm>,
    ell: Vec<f64>,
    top: f64,
    gap: f64,
    adapted: bool,
}

impl AdaptedNormFamily {
    pub fn along_orbit(
        sys: &SystemSpec,
        omega: &MdsShift,
        spectrum: &LyapunovSpectrum,
        grid: &TimeGrid,
        config: &NormConfig,
    ) -> Result<Self> {
        spectrum.validate()?;
        let n = sys.dim();
        if spectrum.dim() != n {
            return Err(Error::config("spectrum dimension differs from the system"));
        }
        let dt = grid.dt();
        let far = grid.t_end() + config.horizon(spectrum.gap, dt);
        let ext = TimeGrid::new(grid.t0(), far, dt)?;
        sys.require_coverage(omega, ext.t0(), ext.t_end())?;
        let dynm = sys.dynamics();
        let classes = spectrum.exponents.len();
        let starts: Vec<Mat> = if classes == 1 {
            alloc::vec![Mat::identity(n, n)]
        } else {
            let start = omega.shift(grid.t0())?;
            let config = SpectrumConfig {
                gap: Some(spectrum.gap),
                ..SpectrumConfig::default()
            };
            let at_start = lyapunov_qr(sys, &start, spectrum.horizon, dt, &config)?;
            if at_start.exponents.len() != classes || !at_start.has_filtration() {
                return Err(Error::EstimationUncertainty {
                    reason: format!("filtration at the grid start has a different class structure"),
                    partial: None,
                });
            }
            at_start.subspaces.iter().map(linalg::orthonormal_basis).collect()
        };
        // Per class: orthonormal bases U_k of the invariant subspace V_i on the grid and the
        // reduced Gram g_k = ∫ R(s, t_k)ᵀR(s, t_k) e^{−2(λ_i+a)(s−t_k)} ds with Φ(s, t_k)U_k = U(s)R(s, t_k).
        let mut bases: Vec<Vec<Mat>> = Vec::with_capacity(classes);
        let mut grams: Vec<Vec<Mat>> = Vec::with_capacity(classes);
        let mut f = |t: f64, y: &Mat| dynm.linear(t, omega) * y;
        for (i, u0) in starts.into_iter().enumerate() {
            let d = u0.ncols();
            let c = spectrum.exponents[i] + spectrum.gap;
            let mut u = u0;
            let mut on_grid = Vec::with_capacity(grid.len());
            let mut steps = Vec::with_capacity(ext.steps());
            for k in 0..ext.steps() {
                if k < grid.len() {
                    on_grid.push(u.clone());
                }
                let t = ext.node(k);
                let w = flow::step(&mut f, t, &u, ext.node(k + 1) - t);
                flow::guard(&w, ext.node(k + 1), k + 1)?;
                let (q, r) = super::signed_qr(w);
                steps.push((ext.node(k + 1) - t, r));
                u = q;
            }
            if on_grid.len() < grid.len() {
                on_grid.push(u);
            }
            let mut g = Mat::zeros(d, d);
            let mut reduced = alloc::vec![Mat::zeros(d, d); grid.len()];
            for k in (0..ext.steps()).rev() {
                let (h, r) = &steps[k];
                let decay = (-2.0 * c * h).exp();
                let rtr = r.transpose() * r;
                let mut next = (r.transpose() * &g * r) * decay + rtr * (0.5 * h * decay);
                for j in 0..d {
                    next[(j, j)] += 0.5 * h;
                }
                flow::guard(&next, ext.node(k), k)?;
                g = next;
                if k < grid.len() {
                    reduced[k] = g.clone();
                }
            }
            if grid.len() > ext.steps() {
                reduced[ext.steps()] = Mat::zeros(d, d);
            }
            grams.push(on_grid.iter().zip(&reduced).map(|(u, g)| u * g * u.transpose()).collect());
            bases.push(on_grid);
        }
        let projectors: Vec<Vec<Mat>> = if classes == 1 {
            alloc::vec![alloc::vec![Mat::identity(n, n); grid.len()]]
        } else {
            let mut per_class = alloc::vec![Vec::with_capacity(grid.len()); classes];
            for k in 0..grid.len() {
                let at: Vec<Mat> = bases.iter().map(|b| b[k].clone()).collect();
                for (i, p) in class_projectors(&at).into_iter().enumerate() {
                    per_class[i].push(p);
                }
            }
            per_class
        };
        let mut norms = Vec::with_capacity(grid.len());
        let mut ell = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let mut gram = Mat::zeros(n, n);
            for i in 0..classes {
                let p = &projectors[i][k];
                gram += p * &grams[i][k] * p;
            }
            let q = QuadraticNorm::from_gram(&gram)?;
            ell.push(q.equivalence());
            norms.push(q);
        }
        Ok(Self {
            grid: *grid,
            norms,
            ell,
            top: spectrum.top(),
            gap: spectrum.gap,
            adapted: true,
        })
    }

    /// Euclidean norms at every node.
    pub fn ambient(grid: &TimeGrid, n: usize) -> Self {
        Self {
            grid: *grid,
            norms: alloc::vec![QuadraticNorm::euclidean(n); grid.len()],
            ell: alloc::vec![1.0; grid.len()],
            top: f64::NAN,
            gap: f64::NAN,
            adapted: false,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn at(&self, k: usize) -> &QuadraticNorm {
        &self.norms[k]
    }

    pub fn norm_at(&self, k: usize, x: &Vector) -> f64 {
        self.norms[k].eval(x)
    }

    /// Equivalence constant ℓ(t_k, ω).
    pub fn ell(&self, k: usize) -> f64 {
        self.ell[k]
    }

    pub fn top_exponent(&self) -> f64 {
        self.top
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted
    }
}

/// Which norm family the sup-norm of BC_ω uses.
#[derive(Debug, Clone)]
pub enum NormFamily {
    Ambient,
    Adapted(Arc<AdaptedNormFamily>),
}

impl NormFamily {
    pub fn norm_at(&self, k: usize, x: &Vector) -> f64 {
        match self {
            NormFamily::Ambient => x.norm(),
            NormFamily::Adapted(f) => f.norm_at(k, x),
        }
    }

    pub fn ell(&self, k: usize) -> f64 {
        match self {
            NormFamily::Ambient => 1.0,
            NormFamily::Adapted(f) => f.ell(k),
        }
    }

    /// Quadratic norm at node `k` in dimension `n`.
    pub fn quadratic(&self, k: usize, n: usize) -> QuadraticNorm {
        match self {
            NormFamily::Ambient => QuadraticNorm::euclidean(n),
            NormFamily::Adapted(f) => f.at(k).clone(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            NormFamily::Ambient => "ambient",
            NormFamily::Adapted(_) => "adapted",
        }
    }

    /// Error unless an adapted family lives on exactly these nodes.
    pub fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        match self {
            NormFamily::Adapted(f) if !f.grid().same_nodes(grid) => {
                Err(Error::config("adapted norm family and field grid differ"))
            }
            _ => Ok(()),
        }
    }
}
