//! Variational flows D₃ʲφ(t, s, η) up to order m.
//!
//! The order-j equation is the Faà di Bruno expansion of the chain rule:
//! d/dt Dʲφ = Σ_π D^{|π|}f(φ)[D^{|B₁|}φ, …, D^{|B_r|}φ] over set partitions π of the j slots.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flow::rk4;
use crate::flow::system::{SystemSpec, Tensor};
use crate::linalg::{Mat, Vector};
use crate::timebase::{MdsShift, TimeGrid};

/// Base trajectory and derivative tensors on a grid.
#[derive(Debug, Clone)]
pub struct VariationalFlow {
    grid: TimeGrid,
    anchor: f64,
    base: Vec<Vector>,
    derivatives: Vec<Vec<Tensor>>,
}

impl VariationalFlow {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Base state φ(t, s, η).
    pub fn state(&self, t: f64) -> Result<&Vector> {
        Ok(&self.base[self.grid.index_of(t)?])
    }

    /// Tensors D₃φ, D₃²φ, … at node `t`.
    pub fn derivatives(&self, t: f64) -> Result<&[Tensor]> {
        Ok(&self.derivatives[self.grid.index_of(t)?])
    }

    /// First derivative D₃φ(t, s, η) as a matrix.
    pub fn jacobian(&self, t: f64) -> Result<Mat> {
        Ok(self.derivatives(t)?[0].to_matrix())
    }

    /// Node-indexed first derivatives.
    pub fn jacobians(&self) -> impl Iterator<Item = Mat> + '_ {
        self.derivatives.iter().map(|d| d[0].to_matrix())
    }
}

/// Set partitions of `{0, …, j−1}` as lists of blocks.
pub(crate) fn set_partitions(j: usize) -> Vec<Vec<Vec<usize>>> {
    let mut out = Vec::new();
    let mut labels = alloc::vec![0usize; j];
    fn rec(pos: usize, max: usize, labels: &mut [usize], out: &mut Vec<Vec<Vec<usize>>>) {
        if pos == labels.len() {
            let mut blocks: Vec<Vec<usize>> = alloc::vec![Vec::new(); max];
            for (i, &l) in labels.iter().enumerate() {
                blocks[l].push(i);
            }
            out.push(blocks);
            return;
        }
        for l in 0..=max {
            labels[pos] = l;
            rec(pos + 1, max.max(l + 1), labels, out);
        }
    }
    if j > 0 {
        rec(0, 0, &mut labels, &mut out);
    }
    out
}

struct Layout {
    n: usize,
    order: usize,
    offsets: Vec<usize>,
    partitions: Vec<Vec<Vec<Vec<usize>>>>,
}

impl Layout {
    fn new(n: usize, order: usize) -> Self {
        let mut offsets = alloc::vec![n];
        for j in 1..=order {
            let last = *offsets.last().expect("non-empty");
            offsets.push(last + n.pow(j as u32 + 1));
        }
        let partitions = (0..=order).map(set_partitions).collect();
        Self {
            n,
            order,
            offsets,
            partitions,
        }
    }

    fn size(&self) -> usize {
        *self.offsets.last().expect("non-empty")
    }

    fn slice<'a>(&self, y: &'a Vector, j: usize) -> &'a [f64] {
        &y.as_slice()[self.offsets[j - 1]..self.offsets[j]]
    }

    fn initial(&self, x: &Vector) -> Vector {
        let mut y = Vector::zeros(self.size());
        y.rows_mut(0, self.n).copy_from(x);
        let n = self.n;
        for i in 0..n {
            y[n + i * n + i] = 1.0;
        }
        y
    }

    fn split(&self, y: &Vector) -> (Vector, Vec<Tensor>) {
        let x = y.rows(0, self.n).into_owned();
        let ts = (1..=self.order)
            .map(|j| Tensor::from_vec(self.n, j, self.slice(y, j).to_vec()).expect("layout size"))
            .collect();
        (x, ts)
    }

    fn rhs(&self, sys: &SystemSpec, t: f64, y: &Vector, omega: &MdsShift) -> Vector {
        let n = self.n;
        let dynm = sys.dynamics();
        let x = y.rows(0, n).into_owned();
        let mut out = Vector::zeros(self.size());
        out.rows_mut(0, n).copy_from(&dynm.rhs(t, &x, omega));
        let mut derivs: Vec<Vec<f64>> = Vec::with_capacity(self.order);
        for r in 1..=self.order {
            let mut d = dynm
                .nonlinear_derivative(r, t, &x, omega)
                .expect("derivative availability checked on entry")
                .data()
                .to_vec();
            if r == 1 {
                let a = dynm.linear(t, omega);
                for i in 0..n {
                    for k in 0..n {
                        d[i * n + k] += a[(i, k)];
                    }
                }
            }
            derivs.push(d);
        }
        let tensors: Vec<&[f64]> = (1..=self.order).map(|j| self.slice(y, j)).collect();
        for j in 1..=self.order {
            let base = self.offsets[j - 1];
            let width = n.pow(j as u32);
            let mut ks = alloc::vec![0usize; j];
            for i in 0..n {
                for flat in 0..width {
                    let mut rem = flat;
                    for q in (0..j).rev() {
                        ks[q] = rem % n;
                        rem /= n;
                    }
                    let mut acc = 0.0;
                    for blocks in &self.partitions[j] {
                        acc += contract(n, &derivs[blocks.len() - 1], blocks, &tensors, &ks, i);
                    }
                    out[base + i * width + flat] = acc;
                }
            }
        }
        out
    }
}

fn contract(n: usize, f: &[f64], blocks: &[Vec<usize>], tensors: &[&[f64]], ks: &[usize], i: usize) -> f64 {
    let r = blocks.len();
    let nr = n.pow(r as u32);
    let mut sum = 0.0;
    let mut ls = alloc::vec![0usize; r];
    for lf in 0..nr {
        let mut rem = lf;
        for b in (0..r).rev() {
            ls[b] = rem % n;
            rem /= n;
        }
        let mut prod = f[i * nr + lf];
        if prod == 0.0 {
            continue;
        }
        for (b, block) in blocks.iter().enumerate() {
            let order = block.len();
            let mut idx = ls[b];
            for &q in block {
                idx = idx * n + ks[q];
            }
            prod *= tensors[order - 1][idx];
        }
        sum += prod;
    }
    sum
}

fn check(sys: &SystemSpec, order: usize) -> Result<()> {
    if order == 0 {
        return Err(Error::config("variational order must be at least 1"));
    }
    sys.require_derivatives(order)
}

/// Base trajectory and derivatives D₃ʲφ(t, s, η), j = 1..order, at every grid node.
pub fn variational_flow(
    sys: &SystemSpec,
    omega: &MdsShift,
    s: f64,
    eta: &Vector,
    grid: &TimeGrid,
    order: usize,
) -> Result<VariationalFlow> {
    check(sys, order)?;
    sys.require_coverage(omega, grid.t0(), grid.t_end())?;
    let layout = Layout::new(sys.dim(), order);
    let idx = grid.index_of(s)?;
    let y0 = layout.initial(eta);
    let mut f = |t: f64, y: &Vector| layout.rhs(sys, t, y, omega);
    let fwd = rk4::march(&mut f, grid, idx, grid.steps(), y0.clone())?;
    let bwd = rk4::march(&mut f, grid, idx, 0, y0)?;
    let mut states: Vec<Vector> = bwd.into_iter().skip(1).rev().collect();
    states.extend(fwd);
    let (base, derivatives) = states.iter().map(|y| layout.split(y)).unzip();
    Ok(VariationalFlow {
        grid: *grid,
        anchor: s,
        base,
        derivatives,
    })
}

/// Endpoint version: φ(t, s, η) and its derivatives, integrating with step `dt` in either direction.
pub fn variational_map(
    sys: &SystemSpec,
    omega: &MdsShift,
    s: f64,
    eta: &Vector,
    t: f64,
    dt: f64,
    order: usize,
) -> Result<(Vector, Vec<Tensor>)> {
    check(sys, order)?;
    sys.require_coverage(omega, s.min(t), s.max(t))?;
    let layout = Layout::new(sys.dim(), order);
    let steps = rk4::step_count(s, t, dt)?;
    let h = if t >= s { dt } else { -dt };
    let mut f = |tt: f64, y: &Vector| layout.rhs(sys, tt, y, omega);
    let y = rk4::march_to_end(&mut f, s, h, steps, layout.initial(eta))?;
    Ok(layout.split(&y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let counts: Vec<usize> = (0..5).map(|j| set_partitions(j).len()).collect();
        assert_eq!(counts, alloc::vec![0, 1, 2, 5, 15]);
    }
}
