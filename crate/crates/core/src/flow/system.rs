//! System description: linear part, nonlinearity, derivative tensors and
//! hypothesis constants.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::timebase::{MdsShift, NoisePath, TimeGrid};

/// Symmetric multilinear map of order `order` on ℝⁿ with values in ℝⁿ.
///
/// Entry `(i; k₁,…,k_j)` sits at `i·nʲ + Σ_l k_l·n^{j−l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dim: usize, order: usize) -> Self {
        Self {
            dim,
            order,
            data: alloc::vec![0.0; dim.pow(order as u32 + 1)],
        }
    }

    pub fn from_vec(dim: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim.pow(order as u32 + 1) {
            return Err(Error::config("tensor data length does not match n^(order+1)"));
        }
        Ok(Self { dim, order, data })
    }

    /// First-order tensor from a matrix.
    pub fn from_matrix(m: &Mat) -> Self {
        let n = m.nrows();
        let mut t = Self::zeros(n, 1);
        for i in 0..n {
            for j in 0..n {
                t.data[i * n + j] = m[(i, j)];
            }
        }
        t
    }

    /// View a first-order tensor as a matrix.
    pub fn to_matrix(&self) -> Mat {
        debug_assert_eq!(self.order, 1);
        Mat::from_row_slice(self.dim, self.dim, &self.data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Max-entry norm.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

/// The vector field ẋ = A_ω(t)x + F_ω(t,x) of a semilinear system.
pub trait Dynamics: Send + Sync {
    /// State dimension n.
    fn dim(&self) -> usize;

    /// Linear part A_ω(t).
    fn linear(&self, t: f64, omega: &MdsShift) -> Mat;

    /// Nonlinearity F_ω(t, x).
    fn nonlinear(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector;

    /// Full right-hand side; override when it is cheaper than `A x + F`.
    fn rhs(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        self.linear(t, omega) * x + self.nonlinear(t, x, omega)
    }

    /// Highest order `m` for which `nonlinear_derivative` is available.
    fn derivative_order(&self) -> usize {
        0
    }

    /// j-th derivative tensor of F in x, `None` if unavailable.
    fn nonlinear_derivative(&self, _order: usize, _t: f64, _x: &Vector, _omega: &MdsShift) -> Option<Tensor> {
        None
    }

    /// Length of path history needed before t when evaluating the coefficients.
    fn history(&self) -> f64 {
        0.0
    }

    /// Number of Wiener components the coefficients read.
    fn noise_dims(&self) -> usize {
        0
    }
}

/// Constants K, α, L, M, M_j of the dichotomy and nonlinearity hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisConstants {
    pub k: f64,
    pub alpha: f64,
    pub l: f64,
    pub m: f64,
    pub m_j: Vec<f64>,
}

impl HypothesisConstants {
    pub fn new(k: f64, alpha: f64, l: f64, m: f64) -> Result<Self> {
        let c = Self {
            k,
            alpha,
            l,
            m,
            m_j: Vec::new(),
        };
        c.validate()?;
        Ok(c)
    }

    /// Attach bounds M₁, M₂, … on the derivatives of F.
    pub fn with_derivative_bounds(mut self, m_j: Vec<f64>) -> Result<Self> {
        self.m_j = m_j;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.k, self.alpha, self.l, self.m]
            .iter()
            .chain(self.m_j.iter())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::config("hypothesis constants must be finite"));
        }
        if self.k < 1.0 {
            return Err(Error::config("K must be at least 1"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("alpha must be positive"));
        }
        if self.l < 0.0 || self.m < 0.0 || self.m_j.iter().any(|&x| x < 0.0) {
            return Err(Error::config("L, M and M_j must be non-negative"));
        }
        Ok(())
    }

    /// Strict K·L < α, required for the topological conjugacy.
    pub fn require_topological(&self) -> Result<()> {
        let kl = self.k * self.l;
        if kl < self.alpha {
            Ok(())
        } else {
            Err(Error::HypothesisViolation {
                inequality: "K·L < α",
                lhs: kl,
                rhs: self.alpha,
            })
        }
    }

    /// Strict K·M₁ < α, required for the smooth conjugacy.
    pub fn require_smooth(&self) -> Result<()> {
        let m1 = self.m1().ok_or(Error::MissingDerivative { order: 1 })?;
        let km = self.k * m1;
        if km < self.alpha {
            Ok(())
        } else {
            Err(Error::HypothesisViolation {
                inequality: "K·M₁ < α",
                lhs: km,
                rhs: self.alpha,
            })
        }
    }

    /// Bound M₁ on the first derivative, if declared.
    pub fn m1(&self) -> Option<f64> {
        self.m_j.first().copied()
    }

    /// Contraction factor K·L/α of the Lyapunov–Perron operator.
    pub fn contraction(&self) -> f64 {
        self.k * self.l / self.alpha
    }

    /// Near-identity bound K·M/α.
    pub fn near_identity(&self) -> f64 {
        self.k * self.m / self.alpha
    }

    /// Lipschitz constant of G: 1 + K²L/(2α − KL).
    pub fn lipschitz_g(&self) -> f64 {
        let (k, l, a) = (self.k, self.l, self.alpha);
        1.0 + k * k * l / (2.0 * a - k * l)
    }

    /// Lipschitz constant of H at elapsed time `tau − τ₀` with equivalence factor `ell`:
    /// 1 + K²L/(2α) + K³L²e^{α(τ−τ₀)}ℓ/(α(α − KL)).
    pub fn lipschitz_h(&self, elapsed: f64, ell: f64) -> f64 {
        let (k, l, a) = (self.k, self.l, self.alpha);
        1.0 + k * k * l / (2.0 * a) + k.powi(3) * l * l * (a * elapsed).exp() * ell / (a * (a - k * l))
    }

    /// Decay rate K·M₁ − α of the first variational flow.
    pub fn variational_rate(&self) -> Option<f64> {
        self.m1().map(|m1| self.k * m1 - self.alpha)
    }
}

/// A semilinear system with declared hypothesis constants.
#[derive(Clone)]
pub struct SystemSpec {
    name: String,
    dynamics: Arc<dyn Dynamics>,
    constants: HypothesisConstants,
}

impl core::fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SystemSpec")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("constants", &self.constants)
            .finish()
    }
}

const PROBE_TIMES: [f64; 6] = [0.0, 0.37, 1.0, 2.5, 5.0, 9.99];

impl SystemSpec {
    /// Validate constants and check F(t, 0) = 0 on a probe grid driven by the zero path.
    pub fn new(name: impl Into<String>, dynamics: Arc<dyn Dynamics>, constants: HypothesisConstants) -> Result<Self> {
        constants.validate()?;
        if dynamics.dim() == 0 {
            return Err(Error::config("state dimension must be at least 1"));
        }
        let lo = -(dynamics.history() + 1.0).ceil();
        let probe = NoisePath::zero(dynamics.noise_dims(), TimeGrid::new(lo, 10.0, 0.01)?)?;
        let omega = MdsShift::new(Arc::new(probe));
        let zero = Vector::zeros(dynamics.dim());
        for &t in &PROBE_TIMES {
            let f = dynamics.nonlinear(t, &zero, &omega);
            if f.len() != dynamics.dim() {
                return Err(Error::config("nonlinearity returns a vector of the wrong dimension"));
            }
            if !(f.norm() <= 1e-12) {
                return Err(Error::config("nonlinearity must vanish at the origin: F(t, 0) != 0"));
            }
            let a = dynamics.linear(t, &omega);
            if a.nrows() != dynamics.dim() || a.ncols() != dynamics.dim() {
                return Err(Error::config("linear part has the wrong shape"));
            }
        }
        Ok(Self {
            name: name.into(),
            dynamics,
            constants,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim()
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    pub fn constants(&self) -> &HypothesisConstants {
        &self.constants
    }

    /// Same dynamics with different constants.
    pub fn with_constants(&self, constants: HypothesisConstants) -> Result<Self> {
        constants.validate()?;
        Ok(Self {
            name: self.name.clone(),
            dynamics: self.dynamics.clone(),
            constants,
        })
    }

    /// The linear part alone (F ≡ 0).
    pub fn linear_part(&self) -> SystemSpec {
        let mut constants = self.constants.clone();
        constants.l = 0.0;
        constants.m = 0.0;
        constants.m_j.iter_mut().for_each(|x| *x = 0.0);
        Self {
            name: self.name.clone(),
            dynamics: Arc::new(LinearPart(self.dynamics.clone())),
            constants,
        }
    }

    /// Error unless the path covers `[lo − history, hi]`.
    pub fn require_coverage(&self, omega: &MdsShift, lo: f64, hi: f64) -> Result<()> {
        omega.require(lo - self.dynamics.history(), hi)?;
        if self.dynamics.noise_dims() > omega.dims() {
            return Err(Error::config("path has fewer Wiener components than the system reads"));
        }
        Ok(())
    }

    /// Derivative order available, with an error naming the first missing order above it.
    pub fn require_derivatives(&self, order: usize) -> Result<()> {
        let have = self.dynamics.derivative_order();
        if order > have {
            Err(Error::MissingDerivative { order: have + 1 })
        } else {
            Ok(())
        }
    }
}

struct LinearPart(Arc<dyn Dynamics>);

impl Dynamics for LinearPart {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        self.0.linear(t, omega)
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::zeros(x.len())
    }

    fn rhs(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        self.0.linear(t, omega) * x
    }

    fn derivative_order(&self) -> usize {
        usize::MAX
    }

    fn nonlinear_derivative(&self, order: usize, _t: f64, x: &Vector, _omega: &MdsShift) -> Option<Tensor> {
        Some(Tensor::zeros(x.len(), order))
    }

    fn history(&self) -> f64 {
        self.0.history()
    }

    fn noise_dims(&self) -> usize {
        self.0.noise_dims()
    }
}
