//! Built-in test systems.
//!
//! * TS1: ẋ = −x + ε sin x.
//! * TS2: ẋ = diag(−1, −2) x.
//! * TS3: ẋ = (−1 + c sin u_t) x + ε sin x with u the stationary OU process of ω.
//! * TS4: dx = λx dt + b x ∘ dW.
//! * TS5: dx = (−x + 0.1 sin x) dt + 0.3 x ∘ dW.

use alloc::sync::Arc;
use alloc::vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::Result;
use crate::flow::{Dynamics, HypothesisConstants, SystemSpec, Tensor};
use crate::linalg::{Mat, Vector};
use crate::sde::{ScalarSde, SdeSystem};
use crate::timebase::{generate_wiener, MdsShift, NoisePath, TimeGrid};

/// Highest derivative order supplied by the built-in nonlinearities.
const SIN_ORDER: usize = 8;

fn sin_derivative(order: usize, x: f64) -> f64 {
    match order % 4 {
        0 => x.sin(),
        1 => x.cos(),
        2 => -x.sin(),
        _ => -x.cos(),
    }
}

/// Scalar ε·sin x tensor of the given order.
fn sin_tensor(eps: f64, order: usize, x: f64) -> Tensor {
    Tensor::from_vec(1, order, vec![eps * sin_derivative(order, x)]).expect("scalar tensor")
}

/// ẋ = −x + ε sin x.
#[derive(Debug, Clone, Copy)]
pub struct Ts1 {
    pub epsilon: f64,
}

impl Dynamics for Ts1 {
    fn dim(&self) -> usize {
        1
    }

    fn linear(&self, _t: f64, _omega: &MdsShift) -> Mat {
        Mat::from_element(1, 1, -1.0)
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::from_element(1, self.epsilon * x[0].sin())
    }

    fn rhs(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::from_element(1, -x[0] + self.epsilon * x[0].sin())
    }

    fn derivative_order(&self) -> usize {
        SIN_ORDER
    }

    fn nonlinear_derivative(&self, order: usize, _t: f64, x: &Vector, _omega: &MdsShift) -> Option<Tensor> {
        (order <= SIN_ORDER).then(|| sin_tensor(self.epsilon, order, x[0]))
    }
}

/// TS1 with K = 1, α = 1, L = M = M_j = |ε|.
pub fn ts1(epsilon: f64) -> Result<SystemSpec> {
    let e = epsilon.abs();
    let constants = HypothesisConstants::new(1.0, 1.0, e, e)?.with_derivative_bounds(vec![e; 3])?;
    SystemSpec::new("ts1", Arc::new(Ts1 { epsilon }), constants)
}

/// Constant linear system ẋ = A x.
#[derive(Debug, Clone)]
pub struct ConstantLinear {
    pub a: Mat,
}

impl Dynamics for ConstantLinear {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn linear(&self, _t: f64, _omega: &MdsShift) -> Mat {
        self.a.clone()
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::zeros(x.len())
    }

    fn rhs(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        &self.a * x
    }

    fn derivative_order(&self) -> usize {
        usize::MAX
    }

    fn nonlinear_derivative(&self, order: usize, _t: f64, x: &Vector, _omega: &MdsShift) -> Option<Tensor> {
        Some(Tensor::zeros(x.len(), order))
    }
}

/// Linear system with declared constants.
pub fn constant_linear(name: &str, a: Mat, k: f64, alpha: f64) -> Result<SystemSpec> {
    let constants = HypothesisConstants::new(k, alpha, 0.0, 0.0)?.with_derivative_bounds(vec![0.0; 3])?;
    SystemSpec::new(name, Arc::new(ConstantLinear { a }), constants)
}

/// TS2: diag(−1, −2).
pub fn ts2() -> Result<SystemSpec> {
    constant_linear("ts2", Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0])), 1.0, 1.0)
}

/// ẋ = (rate + coupling·sin u_t) x + ε sin x, u the stationary OU value of the path.
#[derive(Debug, Clone, Copy)]
pub struct OuModulated {
    pub rate: f64,
    pub coupling: f64,
    pub epsilon: f64,
    pub t_hist: f64,
}

impl OuModulated {
    fn a(&self, t: f64, omega: &MdsShift) -> f64 {
        self.rate + self.coupling * omega.ou(0, t).sin()
    }
}

impl Dynamics for OuModulated {
    fn dim(&self) -> usize {
        1
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        Mat::from_element(1, 1, self.a(t, omega))
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::from_element(1, self.epsilon * x[0].sin())
    }

    fn rhs(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        Vector::from_element(1, self.a(t, omega) * x[0] + self.epsilon * x[0].sin())
    }

    fn derivative_order(&self) -> usize {
        SIN_ORDER
    }

    fn nonlinear_derivative(&self, order: usize, _t: f64, x: &Vector, _omega: &MdsShift) -> Option<Tensor> {
        (order <= SIN_ORDER).then(|| sin_tensor(self.epsilon, order, x[0]))
    }

    fn history(&self) -> f64 {
        self.t_hist
    }

    fn noise_dims(&self) -> usize {
        1
    }
}

/// TS3 with rate −1 and coupling 0.3; ambient constants K = 1, α = 0.7, L = M = |ε|.
pub fn ts3(epsilon: f64, t_hist: f64) -> Result<SystemSpec> {
    let sys = OuModulated {
        rate: -1.0,
        coupling: 0.3,
        epsilon,
        t_hist,
    };
    let e = epsilon.abs();
    let constants = HypothesisConstants::new(1.0, 0.7, e, e)?.with_derivative_bounds(vec![e; 3])?;
    SystemSpec::new(if epsilon == 0.0 { "ts3" } else { "ts3-sin" }, Arc::new(sys), constants)
}

/// ẋ = (rate + coupling·sin u_t) x + (1 + |u_t|) x², u the stationary OU value of the path.
#[derive(Debug, Clone, Copy)]
pub struct OuQuadratic {
    pub rate: f64,
    pub coupling: f64,
    pub t_hist: f64,
}

impl OuQuadratic {
    fn a(&self, t: f64, omega: &MdsShift) -> f64 {
        self.rate + self.coupling * omega.ou(0, t).sin()
    }

    fn q(&self, t: f64, omega: &MdsShift) -> f64 {
        1.0 + omega.ou(0, t).abs()
    }
}

impl Dynamics for OuQuadratic {
    fn dim(&self) -> usize {
        1
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        Mat::from_element(1, 1, self.a(t, omega))
    }

    fn nonlinear(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        Vector::from_element(1, self.q(t, omega) * x[0] * x[0])
    }

    fn derivative_order(&self) -> usize {
        usize::MAX
    }

    fn nonlinear_derivative(&self, order: usize, t: f64, x: &Vector, omega: &MdsShift) -> Option<Tensor> {
        let q = self.q(t, omega);
        let v = match order {
            0 => q * x[0] * x[0],
            1 => 2.0 * q * x[0],
            2 => 2.0 * q,
            _ => 0.0,
        };
        Some(Tensor::from_vec(1, order, vec![v]).expect("scalar tensor"))
    }

    fn history(&self) -> f64 {
        self.t_hist
    }

    fn noise_dims(&self) -> usize {
        1
    }
}

/// TS3 with a quadratic nonlinearity, which has no global Lipschitz bound: L and M are declared
/// as `f64::MAX` so only the cutoff route applies.
pub fn ts3_local(t_hist: f64) -> Result<SystemSpec> {
    let sys = OuQuadratic {
        rate: -1.0,
        coupling: 0.3,
        t_hist,
    };
    let constants = HypothesisConstants::new(1.0, 0.7, f64::MAX, f64::MAX)?;
    SystemSpec::new("ts3-local", Arc::new(sys), constants)
}

/// A one-component Wiener path on `[lo, hi]` with a cached OU series of history `t_hist`.
pub fn ou_path(seed: u64, lo: f64, hi: f64, dt: f64, t_hist: f64) -> Result<NoisePath> {
    generate_wiener(seed, 1, TimeGrid::new(lo, hi, dt)?)?.with_stationary_ou(t_hist)
}


/// TS4: dx = λx dt + b x ∘ dW.
pub fn ts4(lambda: f64, b: f64) -> Result<SdeSystem> {
    SdeSystem::new("ts4", Arc::new(ScalarSde::linear(lambda, b)))
}

/// TS5: dx = (−x + 0.1 sin x) dt + 0.3 x ∘ dW.
pub fn ts5() -> Result<SdeSystem> {
    SdeSystem::new("ts5", Arc::new(ScalarSde::new(-1.0, 0.1, 0.3)))
}
