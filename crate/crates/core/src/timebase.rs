//! Time grids, seeded Wiener paths, the shift group θ and stationary
//! Ornstein–Uhlenbeck histories.
//!
//! Paths live on a fixed two-sided grid containing the origin. Shifts are
//! whole numbers of grid steps, so the group law holds exactly.

use alloc::sync::Arc;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sampling;

const ALIGN_TOL: f64 = 1e-9;

/// Uniform time grid `t0, t0 + dt, …, t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    dt: f64,
    #[serde(skip)]
    steps: usize,
}

fn aligned_count(span: f64, dt: f64) -> Option<i64> {
    let r = span / dt;
    let k = r.round();
    if (r - k).abs() <= ALIGN_TOL * r.abs().max(1.0) {
        Some(k as i64)
    } else {
        None
    }
}

impl TimeGrid {
    /// Grid on `[t0, t_end]` with step `dt`; the span must be a whole number of steps.
    pub fn new(t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::config("grid step dt must be positive and finite"));
        }
        if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::config("grid needs finite t0 < t_end"));
        }
        let steps = aligned_count(t_end - t0, dt).ok_or(Error::Alignment { t: t_end, t0, dt })?;
        Ok(Self {
            t0,
            t_end,
            dt,
            steps: steps as usize,
        })
    }

    /// Grid with `steps` steps of size `dt` starting at `t0`.
    pub fn from_steps(t0: f64, dt: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("grid needs at least one step"));
        }
        Self::new(t0, t0 + steps as f64 * dt, dt)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of steps (node count minus one).
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Time of node `k`.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt
        }
    }

    /// Index of `t` if it is a node.
    pub fn locate(&self, t: f64) -> Option<usize> {
        let k = aligned_count(t - self.t0, self.dt)?;
        (0..=self.steps as i64).contains(&k).then_some(k as usize)
    }

    /// Index of the node `t`, with an alignment or range error otherwise.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = aligned_count(t - self.t0, self.dt).ok_or(Error::Alignment {
            t,
            t0: self.t0,
            dt: self.dt,
        })?;
        if k < 0 || k > self.steps as i64 {
            return Err(Error::OutOfRange {
                t,
                lo: self.t0,
                hi: self.t_end,
            });
        }
        Ok(k as usize)
    }

    /// The aligned sub-grid between nodes `a < b`.
    pub fn subgrid(&self, a: f64, b: f64) -> Result<TimeGrid> {
        let ia = self.index_of(a)?;
        let ib = self.index_of(b)?;
        if ia >= ib {
            return Err(Error::config("sub-grid needs a < b"));
        }
        Ok(TimeGrid {
            t0: self.node(ia),
            t_end: self.node(ib),
            dt: self.dt,
            steps: ib - ia,
        })
    }

    /// Iterator over node times.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.node(k))
    }

    /// Whether two grids have identical nodes.
    pub fn same_nodes(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps
            && (self.t0 - other.t0).abs() <= ALIGN_TOL * self.dt
            && (self.dt - other.dt).abs() <= ALIGN_TOL * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
struct OuSeries {
    t_hist: f64,
    lag: usize,
    values: Vec<Vec<f64>>,
}

/// A sampled Wiener path ω on a two-sided grid containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    seed: u64,
    dims: usize,
    grid: TimeGrid,
    increments: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    origin: usize,
    ou: Option<OuSeries>,
}

/// Sample `dims` independent Wiener components with N(0, dt) increments.
pub fn generate_wiener(seed: u64, dims: usize, grid: TimeGrid) -> Result<NoisePath> {
    let mut rng = sampling::rng(seed);
    let sd = grid.dt().sqrt();
    let increments = (0..dims)
        .map(|_| {
            (0..grid.steps())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    sd * z
                })
                .collect()
        })
        .collect();
    NoisePath::from_increments(seed, grid, increments)
}

impl NoisePath {
    /// Path from explicit increments; the grid must contain the origin.
    pub fn from_increments(seed: u64, grid: TimeGrid, increments: Vec<Vec<f64>>) -> Result<Self> {
        let origin = grid
            .locate(0.0)
            .ok_or_else(|| Error::config("noise grid must contain t = 0 as a node"))?;
        for inc in &increments {
            if inc.len() != grid.steps() {
                return Err(Error::config("increment count must equal grid steps"));
            }
            if inc.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("increments must be finite"));
            }
        }
        let values = increments
            .iter()
            .map(|inc: &Vec<f64>| {
                let mut w = alloc::vec![0.0; grid.len()];
                for k in origin..grid.steps() {
                    w[k + 1] = w[k] + inc[k];
                }
                for k in (0..origin).rev() {
                    w[k] = w[k + 1] - inc[k];
                }
                w
            })
            .collect();
        Ok(Self {
            seed,
            dims: increments.len(),
            grid,
            increments,
            values,
            origin,
            ou: None,
        })
    }

    /// Path with `dims` components that are identically zero.
    pub fn zero(dims: usize, grid: TimeGrid) -> Result<Self> {
        Self::from_increments(0, grid, alloc::vec![alloc::vec![0.0; grid.steps()]; dims])
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Increments of component `c`.
    pub fn increments(&self, c: usize) -> &[f64] {
        &self.increments[c]
    }

    /// Node values of component `c`, anchored at W(0) = 0.
    pub fn node_values(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    /// Index of the origin node.
    pub fn origin(&self) -> usize {
        self.origin
    }

    /// W^c at a node; components beyond `dims` read as zero.
    pub fn node_value(&self, c: usize, k: usize) -> f64 {
        self.values.get(c).map_or(0.0, |w| w[k])
    }

    /// W^c at fractional node position `pos`, linearly interpolated and clamped to the window.
    pub fn value_at_position(&self, c: usize, pos: f64) -> f64 {
        let Some(w) = self.values.get(c) else {
            return 0.0;
        };
        interpolate(w, pos)
    }

    /// W^c at base time `t`.
    pub fn value(&self, c: usize, t: f64) -> f64 {
        self.value_at_position(c, (t - self.grid.t0()) / self.grid.dt())
    }

    /// Attach a cached stationary OU series computed with history `t_hist`.
    pub fn with_stationary_ou(mut self, t_hist: f64) -> Result<Self> {
        let lag = history_steps(t_hist, self.grid.dt())?;
        let dt = self.grid.dt();
        let decay = (-dt).exp();
        let tail = (-(lag as f64) * dt).exp();
        let values = (0..self.dims)
            .map(|c| {
                let inc = &self.increments[c];
                let mut u = alloc::vec![f64::NAN; self.grid.len()];
                if lag <= self.grid.steps() {
                    u[lag] = direct_ou_sum(inc, lag, lag, dt);
                    for k in lag..self.grid.steps() {
                        u[k + 1] = if (k + 1 - lag) % 4096 == 0 {
                            direct_ou_sum(inc, k + 1, lag, dt)
                        } else {
                            decay * (u[k] - tail * inc[k - lag] + inc[k])
                        };
                    }
                }
                u
            })
            .collect();
        self.ou = Some(OuSeries { t_hist, lag, values });
        Ok(self)
    }

    /// History horizon of the cached OU series, if any.
    pub fn ou_history(&self) -> Option<f64> {
        self.ou.as_ref().map(|o| o.t_hist)
    }

    /// Earliest base time with a valid cached OU value.
    pub fn ou_valid_from(&self) -> Option<f64> {
        self.ou.as_ref().map(|o| self.grid.node(o.lag.min(self.grid.steps())))
    }

    /// Stationary OU value of component `c` at fractional position `pos`.
    pub fn ou_at_position(&self, c: usize, pos: f64) -> f64 {
        if c >= self.dims {
            return 0.0;
        }
        match &self.ou {
            Some(o) => interpolate(&o.values[c], pos),
            None => {
                let k = pos.round().clamp(0.0, self.grid.steps() as f64) as usize;
                let lag = history_steps(DEFAULT_OU_HISTORY, self.grid.dt()).unwrap_or(1);
                if k < lag {
                    f64::NAN
                } else {
                    direct_ou_sum(&self.increments[c], k, lag, self.grid.dt())
                }
            }
        }
    }

    /// Sum increments in blocks of `factor`, giving a path on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath> {
        if factor == 0 || self.grid.steps() % factor != 0 || self.origin % factor != 0 {
            return Err(Error::config("coarsening factor must divide the grid and the origin index"));
        }
        let grid = TimeGrid::from_steps(
            self.grid.t0(),
            self.grid.dt() * factor as f64,
            self.grid.steps() / factor,
        )?;
        let increments = self
            .increments
            .iter()
            .map(|inc| inc.chunks(factor).map(|c| c.iter().sum()).collect())
            .collect();
        NoisePath::from_increments(self.seed, grid, increments)
    }
}

/// History horizon used when no OU series is cached.
pub const DEFAULT_OU_HISTORY: f64 = 20.0;

fn history_steps(t_hist: f64, dt: f64) -> Result<usize> {
    if !(t_hist > 0.0) || !t_hist.is_finite() {
        return Err(Error::config("history horizon t_hist must be positive"));
    }
    Ok(((t_hist / dt).round() as usize).max(1))
}

fn interpolate(w: &[f64], pos: f64) -> f64 {
    let last = w.len() - 1;
    if pos <= 0.0 {
        return w[0];
    }
    if pos >= last as f64 {
        return w[last];
    }
    let k = pos.floor() as usize;
    let f = pos - k as f64;
    if f == 0.0 {
        w[k]
    } else {
        w[k] + f * (w[k + 1] - w[k])
    }
}

fn direct_ou_sum(inc: &[f64], k: usize, lag: usize, dt: f64) -> f64 {
    (k - lag..k)
        .map(|j| (-((k - j) as f64) * dt).exp() * inc[j])
        .sum()
}

/// Left-point sum Σ e^{s_j − t} ΔW_j over `[t − t_hist, t]`: the stationary OU value at node `t`.
pub fn stationary_ou(path: &NoisePath, t: f64, component: usize, t_hist: f64) -> Result<f64> {
    let grid = path.grid();
    let k = grid.index_of(t)?;
    let lag = history_steps(t_hist, grid.dt())?;
    if k < lag {
        return Err(Error::OutOfRange {
            t: t - t_hist,
            lo: grid.t0(),
            hi: grid.t_end(),
        });
    }
    if component >= path.dims() {
        return Ok(0.0);
    }
    Ok(direct_ou_sum(path.increments(component), k, lag, grid.dt()))
}

/// The shifted path θ_s ω: value at `u` is W(u + s) − W(s).
#[derive(Debug, Clone)]
pub struct MdsShift {
    base: Arc<NoisePath>,
    offset: i64,
}

/// θ_s applied to the path; `s` must be a whole number of grid steps inside the window.
pub fn shift(path: &Arc<NoisePath>, s: f64) -> Result<MdsShift> {
    MdsShift::new(path.clone()).shift(s)
}

impl MdsShift {
    /// The unshifted path (θ_0 ω).
    pub fn new(base: Arc<NoisePath>) -> Self {
        Self { base, offset: 0 }
    }

    /// Compose with a further shift by `s`.
    pub fn shift(&self, s: f64) -> Result<MdsShift> {
        let g = self.base.grid();
        let k = aligned_count(s, g.dt()).ok_or(Error::Alignment { t: s, t0: 0.0, dt: g.dt() })?;
        self.shift_steps(k)
    }

    /// Compose with a shift by `k` grid steps.
    pub fn shift_steps(&self, k: i64) -> Result<MdsShift> {
        let offset = self.offset + k;
        let p = self.base.origin() as i64 + offset;
        let g = self.base.grid();
        if p < 0 || p > g.steps() as i64 {
            return Err(Error::OutOfRange {
                t: offset as f64 * g.dt(),
                lo: g.t0(),
                hi: g.t_end(),
            });
        }
        Ok(Self {
            base: self.base.clone(),
            offset,
        })
    }

    pub fn base(&self) -> &Arc<NoisePath> {
        &self.base
    }

    /// Shift amount in grid steps.
    pub fn offset_steps(&self) -> i64 {
        self.offset
    }

    /// Shift amount s in time units.
    pub fn offset(&self) -> f64 {
        self.offset as f64 * self.base.grid().dt()
    }

    pub fn dims(&self) -> usize {
        self.base.dims()
    }

    pub fn dt(&self) -> f64 {
        self.base.grid().dt()
    }

    fn anchor(&self) -> usize {
        (self.base.origin() as i64 + self.offset) as usize
    }

    /// Fractional base-grid position of shifted time `u`.
    pub fn position(&self, u: f64) -> f64 {
        self.anchor() as f64 + u / self.dt()
    }

    /// Sampled window in shifted time.
    pub fn window(&self) -> (f64, f64) {
        let a = self.anchor() as f64;
        let dt = self.dt();
        (-a * dt, (self.base.grid().steps() as f64 - a) * dt)
    }

    /// Whether `[lo, hi]` (shifted time) lies inside the sampled window.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let (a, b) = self.window();
        let eps = ALIGN_TOL * self.dt().max(1.0);
        lo >= a - eps && hi <= b + eps
    }

    /// Error unless `[lo, hi]` is covered.
    pub fn require(&self, lo: f64, hi: f64) -> Result<()> {
        if self.covers(lo, hi) {
            Ok(())
        } else {
            let (a, b) = self.window();
            Err(Error::OutOfRange {
                t: if lo < a { lo } else { hi },
                lo: a,
                hi: b,
            })
        }
    }

    /// Shifted Wiener value W(u + s) − W(s) of component `c`.
    pub fn value(&self, c: usize, u: f64) -> f64 {
        self.base.value_at_position(c, self.position(u)) - self.base.node_value(c, self.anchor())
    }

    /// Stationary OU value of component `c` at shifted time `u`.
    pub fn ou(&self, c: usize, u: f64) -> f64 {
        self.base.ou_at_position(c, self.position(u))
    }

    /// Whether two shifts share the same base path.
    pub fn same_base(&self, other: &MdsShift) -> bool {
        Arc::ptr_eq(&self.base, &other.base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, dt: f64) -> TimeGrid {
        TimeGrid::new(lo, hi, dt).unwrap()
    }

    #[test]
    fn grid_rejects_bad_step() {
        assert!(matches!(TimeGrid::new(0.0, 1.0, 0.0), Err(Error::Config(_))));
        assert!(matches!(TimeGrid::new(0.0, 1.0, -0.1), Err(Error::Config(_))));
        assert!(matches!(TimeGrid::new(0.0, 1.0, 0.3), Err(Error::Alignment { .. })));
    }

    #[test]
    fn grid_nodes_increase() {
        let g = grid(-2.0, 3.0, 0.01);
        assert_eq!(g.len(), 501);
        assert_eq!(g.node(500), 3.0);
        assert_eq!(g.index_of(0.5).unwrap(), 250);
        assert!(g.times().zip(g.times().skip(1)).all(|(a, b)| b > a));
    }

    #[test]
    fn empty_path_reads_zero() {
        let p = generate_wiener(42, 0, grid(-1.0, 1.0, 0.01)).unwrap();
        assert_eq!(p.dims(), 0);
        let w = MdsShift::new(Arc::new(p));
        assert_eq!(w.value(0, 0.5), 0.0);
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let g = grid(-1.0, 1.0, 0.01);
        let a = generate_wiener(42, 2, g).unwrap();
        let b = generate_wiener(42, 2, g).unwrap();
        assert_eq!(a.increments(0), b.increments(0));
        assert_eq!(a.increments(1), b.increments(1));
    }

    #[test]
    fn increment_variance_matches_dt() {
        let p = generate_wiener(7, 1, TimeGrid::from_steps(0.0, 0.01, 100_000).unwrap()).unwrap();
        let inc = p.increments(0);
        let mean = inc.iter().sum::<f64>() / inc.len() as f64;
        let var = inc.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (inc.len() - 1) as f64;
        assert!((0.0095..=0.0105).contains(&var), "variance {var}");
    }

    #[test]
    fn shift_is_wiener_difference() {
        let g = grid(0.0, 1.0, 0.1);
        let mut inc = alloc::vec![0.0; 10];
        inc[4] = 0.3;
        inc[5] = 0.3;
        inc[6] = 0.2;
        let p = Arc::new(NoisePath::from_increments(0, g, alloc::vec![inc]).unwrap());
        assert!((p.value(0, 0.5) - 0.3).abs() < 1e-15);
        assert!((p.value(0, 0.7) - 0.8).abs() < 1e-15);
        let s = shift(&p, 0.5).unwrap();
        assert!((s.value(0, 0.2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shift_errors() {
        let p = Arc::new(generate_wiener(1, 1, grid(-1.0, 1.0, 0.1)).unwrap());
        assert!(matches!(shift(&p, 0.05), Err(Error::Alignment { .. })));
        assert!(matches!(shift(&p, 2.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn ou_cache_matches_direct_sum() {
        let p = generate_wiener(3, 1, grid(-25.0, 5.0, 0.01))
            .unwrap()
            .with_stationary_ou(20.0)
            .unwrap();
        for t in [-5.0, 0.0, 0.37, 4.99] {
            let direct = stationary_ou(&p, t, 0, 20.0).unwrap();
            let cached = MdsShift::new(Arc::new(p.clone())).ou(0, t);
            assert!((direct - cached).abs() < 1e-12, "{t}: {direct} vs {cached}");
        }
    }

    #[test]
    fn ou_of_zero_path_is_zero() {
        let p = NoisePath::zero(1, grid(-25.0, 1.0, 0.01)).unwrap();
        assert_eq!(stationary_ou(&p, 0.0, 0, 20.0).unwrap(), 0.0);
    }

    #[test]
    fn ou_needs_history() {
        let p = generate_wiener(3, 1, grid(-5.0, 5.0, 0.01)).unwrap();
        assert!(matches!(stationary_ou(&p, 0.0, 0, 20.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn coarsen_sums_increments() {
        let p = generate_wiener(5, 1, grid(-1.0, 1.0, 0.01)).unwrap();
        let c = p.coarsen(5).unwrap();
        assert_eq!(c.grid().steps(), 40);
        assert!((c.value(0, 0.5) - p.value(0, 0.5)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn shift_group_law(s in -50i64..50, t in -50i64..50) {
            let p = Arc::new(generate_wiener(9, 2, grid(-2.0, 2.0, 0.01)).unwrap());
            let base = MdsShift::new(p.clone());
            let two = base.shift_steps(s).and_then(|x| x.shift_steps(t)).unwrap();
            let one = base.shift_steps(s + t).unwrap();
            for k in -20..20 {
                let u = k as f64 * 0.01;
                prop_assert_eq!(two.value(0, u), one.value(0, u));
                prop_assert_eq!(two.value(1, u), one.value(1, u));
            }
        }

        #[test]
        fn shifted_increments_are_a_slice(s in -100i64..100, k in 0usize..50) {
            let p = Arc::new(generate_wiener(4, 1, grid(-2.0, 2.0, 0.01)).unwrap());
            let w = MdsShift::new(p.clone()).shift_steps(s).unwrap();
            let u = k as f64 * 0.01;
            let inc = w.value(0, u + 0.01) - w.value(0, u);
            let j = (p.origin() as i64 + s) as usize + k;
            prop_assert!((inc - p.increments(0)[j]).abs() < 1e-12);
        }

        #[test]
        fn shift_by_zero_is_identity(k in 0usize..400) {
            let p = Arc::new(generate_wiener(2, 1, grid(-2.0, 2.0, 0.01)).unwrap());
            let w = shift(&p, 0.0).unwrap();
            let t = -2.0 + k as f64 * 0.01;
            prop_assert!((w.value(0, t) - p.value(0, t)).abs() < 1e-13);
        }
    }
}
