//! Classical fixed-step RK4 over grid nodes in either direction.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::timebase::TimeGrid;

/// States whose norm exceeds this are reported as divergent.
pub const DIVERGENCE_GUARD: f64 = 1e12;

pub(crate) trait OdeState: Clone {
    fn axpy(&self, a: f64, k: &Self) -> Self;
    fn combine(&self, h: f64, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self;
    fn size(&self) -> f64;
}

macro_rules! ode_state {
    ($t:ty) => {
        impl OdeState for $t {
            fn axpy(&self, a: f64, k: &Self) -> Self {
                self + k * a
            }

            fn combine(&self, h: f64, k1: &Self, k2: &Self, k3: &Self, k4: &Self) -> Self {
                let mut out = self.clone();
                let w = h / 6.0;
                for i in 0..out.len() {
                    out[i] += w * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
                out
            }

            fn size(&self) -> f64 {
                self.norm()
            }
        }
    };
}

ode_state!(Vector);
ode_state!(Mat);

/// One RK4 step of size `h` (negative for backward steps).
pub(crate) fn step<S: OdeState, F: FnMut(f64, &S) -> S>(f: &mut F, t: f64, y: &S, h: f64) -> S {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &y.axpy(0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &y.axpy(0.5 * h, &k2));
    let k4 = f(t + h, &y.axpy(h, &k3));
    y.combine(h, &k1, &k2, &k3, &k4)
}

pub(crate) fn guard<S: OdeState>(y: &S, t: f64, node: usize) -> Result<()> {
    let n = y.size();
    if n.is_finite() && n <= DIVERGENCE_GUARD {
        Ok(())
    } else {
        Err(Error::Divergence { t, node, norm: n })
    }
}

/// March from node `from` to node `to` (either direction); returns states in march order.
pub(crate) fn march<S: OdeState, F: FnMut(f64, &S) -> S>(
    f: &mut F,
    grid: &TimeGrid,
    from: usize,
    to: usize,
    y0: S,
) -> Result<Vec<S>> {
    let count = from.abs_diff(to) + 1;
    let mut out = Vec::with_capacity(count);
    out.push(y0);
    let mut k = from;
    while k != to {
        let next = if to > from { k + 1 } else { k - 1 };
        let t = grid.node(k);
        let h = grid.node(next) - t;
        let y = step(f, t, out.last().expect("non-empty"), h);
        guard(&y, grid.node(next), next)?;
        out.push(y);
        k = next;
    }
    Ok(out)
}

/// March `steps` steps of size `h` from `t0`, keeping only the final state.
pub(crate) fn march_to_end<S: OdeState, F: FnMut(f64, &S) -> S>(
    f: &mut F,
    t0: f64,
    h: f64,
    steps: usize,
    y0: S,
) -> Result<S> {
    let mut y = y0;
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        y = step(f, t, &y, h);
        guard(&y, t + h, k + 1)?;
    }
    Ok(y)
}

/// Number of steps of size `dt` covering `to − from`, with an alignment error otherwise.
pub(crate) fn step_count(from: f64, to: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::config("step dt must be positive"));
    }
    let r = (to - from).abs() / dt;
    let k = r.round();
    if (r - k).abs() > 1e-9 * r.max(1.0) {
        return Err(Error::Alignment { t: to, t0: from, dt });
    }
    Ok(k as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay_error(steps: usize) -> f64 {
        let mut f = |_t: f64, y: &Vector| -y * 1.0 + Vector::from_element(1, (y[0]).sin());
        let y = march_to_end(&mut f, 0.0, 1.0 / steps as f64, steps, Vector::from_element(1, 1.0)).unwrap();
        let fine = march_to_end(&mut f, 0.0, 1.0 / 4096.0, 4096, Vector::from_element(1, 1.0)).unwrap();
        (y[0] - fine[0]).abs()
    }

    #[test]
    fn fourth_order_convergence() {
        let ratio = decay_error(16) / decay_error(32);
        assert!(ratio >= 12.0, "ratio {ratio}");
    }

    #[test]
    fn divergence_is_reported() {
        let grid = TimeGrid::new(0.0, 10.0, 0.1).unwrap();
        let mut f = |_t: f64, y: &Vector| y.map(|v| v * v);
        let err = march(&mut f, &grid, 0, 100, Vector::from_element(1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }
}
