//! Solutions of ẋ = A_ω(t)x + F_ω(t,x), evolution operators Φ_ω(t,s) and
//! variational flows.
//!
//! Argument convention: φ(t, s, x) is the state at time t of the solution
//! that equals x at time s.

mod rk4;
mod system;
mod variational;

use alloc::vec::Vec;

pub use rk4::DIVERGENCE_GUARD;
pub(crate) use rk4::{guard, march, march_to_end, step, step_count};
pub use system::{Dynamics, HypothesisConstants, SystemSpec, Tensor};
pub use variational::{variational_flow, variational_map, VariationalFlow};

use crate::error::Result;
use crate::linalg::{Mat, Vector};
use crate::timebase::{MdsShift, TimeGrid};

/// General solution φ(t; τ, ξ) sampled on every node of a grid.
#[derive(Debug, Clone)]
pub struct TrajectoryGrid {
    grid: TimeGrid,
    states: Vec<Vector>,
    origin: (f64, Vector),
}

impl TrajectoryGrid {
    pub(crate) fn from_parts(grid: TimeGrid, states: Vec<Vector>, origin: (f64, Vector)) -> Self {
        Self { grid, states, origin }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    /// Initial pair (τ, ξ).
    pub fn origin(&self) -> (f64, &Vector) {
        (self.origin.0, &self.origin.1)
    }

    /// State at node `t`.
    pub fn state(&self, t: f64) -> Result<&Vector> {
        Ok(&self.states[self.grid.index_of(t)?])
    }

    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one node")
    }
}

fn stitch<S>(bwd: Vec<S>, fwd: Vec<S>) -> Vec<S> {
    let mut out: Vec<S> = bwd.into_iter().skip(1).rev().collect();
    out.extend(fwd);
    out
}

/// φ(t; τ, ξ) at every node of `grid`, integrating forward and backward from τ.
pub fn solve_ivp(sys: &SystemSpec, omega: &MdsShift, tau: f64, xi: &Vector, grid: &TimeGrid) -> Result<TrajectoryGrid> {
    sys.require_coverage(omega, grid.t0(), grid.t_end())?;
    let idx = grid.index_of(tau)?;
    let dynm = sys.dynamics();
    let mut f = |t: f64, x: &Vector| dynm.rhs(t, x, omega);
    let fwd = march(&mut f, grid, idx, grid.steps(), xi.clone())?;
    let bwd = march(&mut f, grid, idx, 0, xi.clone())?;
    Ok(TrajectoryGrid::from_parts(*grid, stitch(bwd, fwd), (tau, xi.clone())))
}

/// φ(t, s, x) with step `dt`, in either time direction.
pub fn flow_map(sys: &SystemSpec, omega: &MdsShift, s: f64, x: &Vector, t: f64, dt: f64) -> Result<Vector> {
    sys.require_coverage(omega, s.min(t), s.max(t))?;
    let steps = step_count(s, t, dt)?;
    let h = if t >= s { dt } else { -dt };
    let dynm = sys.dynamics();
    let mut f = |tt: f64, y: &Vector| dynm.rhs(tt, y, omega);
    march_to_end(&mut f, s, h, steps, x.clone())
}

/// Φ_ω(t, s) with step `dt`, in either time direction (backward integration for t < s).
pub fn transition(sys: &SystemSpec, omega: &MdsShift, t: f64, s: f64, dt: f64) -> Result<Mat> {
    sys.require_coverage(omega, s.min(t), s.max(t))?;
    let steps = step_count(s, t, dt)?;
    let h = if t >= s { dt } else { -dt };
    let dynm = sys.dynamics();
    let mut f = |tt: f64, y: &Mat| dynm.linear(tt, omega) * y;
    let n = sys.dim();
    march_to_end(&mut f, s, h, steps, Mat::identity(n, n))
}

/// Φ_ω(t, s) at every node t of a grid for a fixed anchor s.
#[derive(Debug, Clone)]
pub struct EvolutionOperator {
    grid: TimeGrid,
    anchor: f64,
    anchor_index: usize,
    matrices: Vec<Mat>,
}

impl EvolutionOperator {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn anchor_index(&self) -> usize {
        self.anchor_index
    }

    /// Φ(t, s) at node `t`.
    pub fn at(&self, t: f64) -> Result<&Mat> {
        Ok(&self.matrices[self.grid.index_of(t)?])
    }

    pub fn at_index(&self, k: usize) -> &Mat {
        &self.matrices[k]
    }

    pub fn matrices(&self) -> &[Mat] {
        &self.matrices
    }

    /// ‖Φ(s, s) − I‖.
    pub fn identity_residual(&self) -> f64 {
        let m = &self.matrices[self.anchor_index];
        (m - Mat::identity(m.nrows(), m.ncols())).norm()
    }
}

/// Φ_ω(·, s) on a grid: forward integration for t ≥ s, backward for t < s.
pub fn evolution_operator(sys: &SystemSpec, omega: &MdsShift, s: f64, grid: &TimeGrid) -> Result<EvolutionOperator> {
    sys.require_coverage(omega, grid.t0(), grid.t_end())?;
    let idx = grid.index_of(s)?;
    let n = sys.dim();
    let dynm = sys.dynamics();
    let mut f = |t: f64, y: &Mat| dynm.linear(t, omega) * y;
    let fwd = march(&mut f, grid, idx, grid.steps(), Mat::identity(n, n))?;
    let bwd = march(&mut f, grid, idx, 0, Mat::identity(n, n))?;
    Ok(EvolutionOperator {
        grid: *grid,
        anchor: s,
        anchor_index: idx,
        matrices: stitch(bwd, fwd),
    })
}

/// sup_t ‖φ(t,s,ξ) − Φ(t,s)ξ − ∫_s^t Φ(t,r)F(r,φ(r,s,ξ))dr‖ over nodes t ≥ s, trapezoid quadrature.
pub fn voc_residual(sys: &SystemSpec, omega: &MdsShift, s: f64, xi: &Vector, grid: &TimeGrid) -> Result<f64> {
    let traj = solve_ivp(sys, omega, s, xi, grid)?;
    let evo = evolution_operator(sys, omega, s, grid)?;
    let idx = grid.index_of(s)?;
    let n = sys.dim();
    let dynm = sys.dynamics();
    // Y(r) = Φ(s, r) solves Y' = −Y A(r), Y(s) = I.
    let mut adj = |t: f64, y: &Mat| -(y * dynm.linear(t, omega));
    let ys = march(&mut adj, grid, idx, grid.steps(), Mat::identity(n, n))?;
    let integrand: Vec<Vector> = ys
        .iter()
        .enumerate()
        .map(|(j, y)| {
            let k = idx + j;
            y * dynm.nonlinear(grid.node(k), &traj.states()[k], omega)
        })
        .collect();
    let mut acc = Vector::zeros(n);
    let mut worst: f64 = 0.0;
    for j in 0..integrand.len() {
        let k = idx + j;
        if j > 0 {
            let h = grid.node(k) - grid.node(k - 1);
            acc += (&integrand[j - 1] + &integrand[j]) * (0.5 * h);
        }
        let phi = evo.at_index(k);
        let r = &traj.states()[k] - phi * xi - phi * &acc;
        worst = worst.max(r.norm());
    }
    Ok(worst)
}
