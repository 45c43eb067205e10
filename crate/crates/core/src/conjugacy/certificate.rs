//! Sampled certificates for the conjugacy field.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::format;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

use super::{BoundedPathGrid, ConjugacyField};
use crate::error::Result;
use crate::flow;
use crate::linalg::{self, Vector};
use crate::sampling;

/// Relative slacks applied to theoretical bounds and residual tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    pub bound: f64,
    pub lipschitz: f64,
    pub conj: f64,
    pub fd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            bound: 1e-3,
            lipschitz: 1e-2,
            conj: 1e-4,
            fd: 1e-4,
        }
    }
}

/// Probe design for a certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSpec {
    /// Grid times at which H and G are probed.
    pub times: Vec<f64>,
    /// Latin-hypercube pairs for Lipschitz quotients.
    pub pairs: usize,
    /// Sampling ball radius.
    pub radius: f64,
    /// Points for residual and near-identity checks.
    pub residual_probes: usize,
    pub seed: u64,
    /// Finite-difference step for D₂G.
    pub fd_step: f64,
    pub tolerances: Tolerances,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            times: alloc::vec![0.0, 1.0, 2.0, 5.0],
            pairs: 200,
            radius: 5.0,
            residual_probes: 100,
            seed: 0,
            fd_step: 1e-5,
            tolerances: Tolerances::default(),
        }
    }
}

/// Per-time evidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeReport {
    pub t: f64,
    pub l_h_theory: f64,
    pub l_h_empirical: f64,
    pub l_g_empirical: f64,
    pub near_identity_h: f64,
    pub near_identity_g: f64,
    /// max ‖G(t, H(t, ξ)) − ξ‖.
    pub inverse_gh: f64,
    /// max ‖H(t, G(t, η)) − η‖.
    pub inverse_hg: f64,
    /// max over pairs of ‖φ(t,τ₀,η) − φ(t,τ₀,η̄)‖ / (K e^{(KL−α)(t−τ₀)} ‖η − η̄‖).
    pub solution_contraction: f64,
}

/// Theoretical and empirical Lipschitz constants, near-identity and residual evidence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzCertificate {
    pub l_h_theory: f64,
    pub l_g_theory: f64,
    pub l_h_empirical: f64,
    pub l_g_empirical: f64,
    pub near_identity_bound: f64,
    pub near_identity_empirical: f64,
    pub conjugation_residual: f64,
    pub inverse_residual: f64,
    pub solution_contraction: f64,
    /// Informational: max ‖D₂G‖ over residual probes when DF is available.
    pub local_g_derivative: Option<f64>,
    pub per_time: Vec<TimeReport>,
    pub probes: ProbeSpec,
    pub norm: &'static str,
    pub pass: bool,
    pub failures: Vec<String>,
}

/// Sampled evidence for the Lyapunov–Perron operators.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorReport {
    pub op_f_bound: f64,
    pub op_f_sup: f64,
    pub contraction_bound: f64,
    pub contraction_max: f64,
    pub picard_gap_ratio: f64,
    pub picard_iterations: usize,
    pub picard_iteration_bound: f64,
    pub pairs: usize,
}

/// Sampled evidence for the smooth conjugacy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothCertificate {
    pub fd_relative_error: f64,
    pub min_determinant: f64,
    pub max_condition: f64,
    /// max ‖D₃φ(t, s, η)‖ / (K e^{(KM₁−α)(t−s)}).
    pub variational_ratio: f64,
    pub probes: usize,
    pub pass: bool,
    pub failures: Vec<String>,
}

fn quotient(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

impl ConjugacyField {
    /// A smooth random path with sup-norm at most `radius`.
    pub fn random_path(&self, seed: u64, radius: f64) -> Result<BoundedPathGrid> {
        let n = self.sys.dim();
        const MODES: usize = 3;
        let design = sampling::latin_hypercube(seed, 1, n * MODES * 3);
        let c = &design[0];
        let span = (self.grid.t_end() - self.grid.t0()).max(1.0);
        let values = self
            .grid
            .times()
            .map(|t| {
                let u = (t - self.grid.t0()) / span;
                Vector::from_fn(n, |i, _| {
                    (0..MODES)
                        .map(|m| {
                            let b = (i * MODES + m) * 3;
                            let amp = (2.0 * c[b] - 1.0) * radius / MODES as f64;
                            let freq = 1.0 + 6.0 * c[b + 1];
                            let phase = core::f64::consts::TAU * c[b + 2];
                            amp * (core::f64::consts::TAU * freq * u + phase).sin()
                        })
                        .sum::<f64>()
                        / (n as f64).sqrt()
                })
            })
            .collect();
        self.wrap(values)
    }

    /// op_F bound, contraction ratio on random path pairs and the Picard gap history for ξ.
    pub fn operator_report(&self, pairs: usize, radius: f64, seed: u64, tau: f64, xi: &Vector) -> Result<OperatorReport> {
        let c = self.constants();
        let mut op_f_sup: f64 = 0.0;
        let mut contraction: f64 = 0.0;
        for p in 0..pairs as u64 {
            let a = self.random_path(seed.wrapping_add(2 * p), radius)?;
            let b = self.random_path(seed.wrapping_add(2 * p + 1), radius)?;
            let fa = self.op_f(&a)?;
            let fb = self.op_f(&b)?;
            op_f_sup = op_f_sup.max(self.sup_norm(&fa)?).max(self.sup_norm(&fb)?);
            let num = self.sup_norm(&fa.difference(&fb)?)?;
            let den = self.sup_norm(&a.difference(&b)?)?;
            contraction = contraction.max(quotient(num, den));
        }
        let run = self.picard(tau, xi)?;
        let q = c.contraction();
        let first = run.gaps.first().copied().unwrap_or(0.0);
        let bound = if first > 0.0 && q > 0.0 && q < 1.0 {
            ((self.config.picard_tol / first).ln() / q.ln()).ceil() + 1.0
        } else {
            1.0
        };
        Ok(OperatorReport {
            op_f_bound: c.near_identity(),
            op_f_sup,
            contraction_bound: q,
            contraction_max: contraction,
            picard_gap_ratio: run.max_gap_ratio(self.config.picard_tol * 1e-2),
            picard_iterations: run.iterations,
            picard_iteration_bound: bound.max(1.0),
            pairs,
        })
    }

    /// Full sampled certificate for H and G at the probe times.
    pub fn certify(&self, probes: &ProbeSpec) -> Result<LipschitzCertificate> {
        let c = self.constants().clone();
        let tol = probes.tolerances;
        let n = self.sys.dim();
        let pairs = sampling::ball_pairs(probes.seed, probes.pairs, n, probes.radius);
        let points = sampling::ball_points(probes.seed ^ 0x9e37_79b9, probes.residual_probes, n, probes.radius);
        let tau0 = self.tau0();
        let dt = self.grid.dt();
        let mut per_time = Vec::with_capacity(probes.times.len());
        let mut failures = Vec::new();
        let mut ks = Vec::with_capacity(probes.times.len());
        for &t in &probes.times {
            let k = self.grid.index_of(t)?;
            ks.push(k);
            let t = self.grid.node(k);
            let elapsed = t - tau0;
            let l_h_theory = c.lipschitz_h(elapsed, self.norms.ell(k));
            let mut l_h: f64 = 0.0;
            let mut l_g: f64 = 0.0;
            let mut contraction: f64 = 0.0;
            let rate = c.k * (-(c.alpha - c.k * c.l) * elapsed).exp();
            for (x, y) in &pairs {
                let d = self.norm_at(k, &(x - y));
                let (hx, hy) = (self.h_at(k, x)?, self.h_at(k, y)?);
                l_h = l_h.max(quotient(self.norm_at(k, &(hx - hy)), d));
                let (gx, gy) = (self.g_at(k, x)?, self.g_at(k, y)?);
                l_g = l_g.max(quotient(self.norm_at(k, &(gx - gy)), d));
                if k > 0 {
                    let px = flow::flow_map(&self.sys, &self.omega, tau0, x, t, dt)?;
                    let py = flow::flow_map(&self.sys, &self.omega, tau0, y, t, dt)?;
                    let d0 = self.norm_at(0, &(x - y));
                    contraction = contraction.max(quotient(self.norm_at(k, &(px - py)), rate * d0));
                }
            }
            let mut near_h: f64 = 0.0;
            let mut near_g: f64 = 0.0;
            let mut inv_gh: f64 = 0.0;
            let mut inv_hg: f64 = 0.0;
            for x in &points {
                let hx = self.h_at(k, x)?;
                let gx = self.g_at(k, x)?;
                near_h = near_h.max(self.norm_at(k, &(&hx - x)));
                near_g = near_g.max(self.norm_at(k, &(&gx - x)));
                inv_gh = inv_gh.max(self.norm_at(k, &(self.g_at(k, &hx)? - x)));
                inv_hg = inv_hg.max(self.norm_at(k, &(self.h_at(k, &gx)? - x)));
            }
            if l_h > l_h_theory * (1.0 + tol.lipschitz) {
                failures.push(format!("t={t}: empirical L_H {l_h} exceeds {l_h_theory}"));
            }
            if contraction > 1.0 + tol.bound {
                failures.push(format!("t={t}: solution contraction ratio {contraction} exceeds 1"));
            }
            per_time.push(TimeReport {
                t,
                l_h_theory,
                l_h_empirical: l_h,
                l_g_empirical: l_g,
                near_identity_h: near_h,
                near_identity_g: near_g,
                inverse_gh: inv_gh,
                inverse_hg: inv_hg,
                solution_contraction: contraction,
            });
        }
        let mut conj: f64 = 0.0;
        for (a, &ka) in ks.iter().enumerate() {
            for &kb in &ks[a..] {
                if kb <= ka {
                    continue;
                }
                let (s, t) = (self.grid.node(ka), self.grid.node(kb));
                for x in &points {
                    conj = conj.max(self.conjugation_residual(s, t, x)?);
                }
            }
        }
        let local_g_derivative = if self.sys.dynamics().derivative_order() >= 1 && c.require_smooth().is_ok() {
            let mut worst: f64 = 0.0;
            for &k in &ks {
                for x in &points {
                    worst = worst.max(linalg::spectral_norm(&self.d2g(self.grid.node(k), x)?));
                }
            }
            Some(worst)
        } else {
            None
        };
        let fold = |f: fn(&TimeReport) -> f64| per_time.iter().map(f).fold(0.0, f64::max);
        let l_h_theory = fold(|r| r.l_h_theory);
        let l_h_empirical = fold(|r| r.l_h_empirical);
        let l_g_empirical = fold(|r| r.l_g_empirical);
        let near = fold(|r| r.near_identity_h.max(r.near_identity_g));
        let inverse = fold(|r| r.inverse_gh.max(r.inverse_hg));
        let contraction = fold(|r| r.solution_contraction);
        let l_g_theory = c.lipschitz_g();
        let near_bound = c.near_identity();
        if l_g_empirical > l_g_theory * (1.0 + tol.lipschitz) {
            failures.push(format!("empirical L_G {l_g_empirical} exceeds {l_g_theory}"));
        }
        if near > near_bound * (1.0 + tol.bound) {
            failures.push(format!("near-identity {near} exceeds {near_bound}"));
        }
        if conj > tol.conj {
            failures.push(format!("conjugation residual {conj} exceeds {}", tol.conj));
        }
        if inverse > tol.conj {
            failures.push(format!("inverse residual {inverse} exceeds {}", tol.conj));
        }
        Ok(LipschitzCertificate {
            l_h_theory,
            l_g_theory,
            l_h_empirical,
            l_g_empirical,
            near_identity_bound: near_bound,
            near_identity_empirical: near,
            conjugation_residual: conj,
            inverse_residual: inverse,
            solution_contraction: contraction,
            local_g_derivative,
            per_time,
            probes: probes.clone(),
            norm: self.norms.tag(),
            pass: failures.is_empty(),
            failures,
        })
    }

    /// D₂G against central differences, its determinant, and the variational bound.
    pub fn certify_smooth(&self, probes: &ProbeSpec) -> Result<SmoothCertificate> {
        let c = self.constants().clone();
        let tol = probes.tolerances;
        let n = self.sys.dim();
        let m1 = c.m1().ok_or(crate::Error::MissingDerivative { order: 1 })?;
        let points = sampling::ball_points(probes.seed ^ 0x5151, probes.residual_probes, n, probes.radius);
        let tau0 = self.tau0();
        let dt = self.grid.dt();
        let mut fd: f64 = 0.0;
        let mut min_det = f64::INFINITY;
        let mut max_cond: f64 = 0.0;
        let mut var_ratio: f64 = 0.0;
        for &t in &probes.times {
            let k = self.grid.index_of(t)?;
            let t = self.grid.node(k);
            for x in &points {
                let d = self.d2g(t, x)?;
                let f = self.d2g_finite_difference(t, x, probes.fd_step)?;
                fd = fd.max((&d - &f).norm() / d.norm().max(1e-300));
                min_det = min_det.min(d.determinant());
                let smin = linalg::min_singular(&d);
                max_cond = max_cond.max(if smin > 0.0 { linalg::spectral_norm(&d) / smin } else { f64::INFINITY });
                if k > 0 {
                    let (_, ders) = flow::variational_map(&self.sys, &self.omega, tau0, x, t, dt, 1)?;
                    let bound = c.k * ((c.k * m1 - c.alpha) * (t - tau0)).exp();
                    var_ratio = var_ratio.max(linalg::spectral_norm(&ders[0].to_matrix()) / bound);
                }
            }
        }
        let mut failures = Vec::new();
        if fd > tol.fd {
            failures.push(format!("D2G finite-difference error {fd} exceeds {}", tol.fd));
        }
        if !(min_det > 0.0) {
            failures.push(format!("det D2G {min_det} is not positive"));
        }
        if var_ratio > 1.0 + tol.bound {
            failures.push(format!("variational bound ratio {var_ratio} exceeds 1"));
        }
        Ok(SmoothCertificate {
            fd_relative_error: fd,
            min_determinant: min_det,
            max_condition: max_cond,
            variational_ratio: var_ratio,
            probes: points.len() * probes.times.len(),
            pass: failures.is_empty(),
            failures,
        })
    }
}
