//! Lyapunov exponents and Oseledets filtrations of linear cocycles, the
//! MET-adapted random norm and dichotomy certification.

mod dichotomy;
mod norm;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::Serialize;

pub use dichotomy::{certify_dichotomy, DichotomyCertificate, DichotomyRoute};
pub use norm::{
    adapted_norm_eval, weighted_operator_norm, AdaptedNorm, AdaptedNormFamily, NormConfig, NormFamily, QuadraticNorm,
};

use crate::error::{Error, Result};
use crate::flow::{self, SystemSpec};
use crate::linalg::{self, Mat};
use crate::sampling;
use crate::timebase::MdsShift;

/// Estimated Lyapunov spectrum with multiplicities, filtration and spectral gap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSpectrum {
    /// Distinct exponents λ₁ > … > λ_k.
    pub exponents: Vec<f64>,
    /// Multiplicities d_i.
    pub multiplicities: Vec<usize>,
    /// Per-direction QR exponents before clustering, in frame order.
    pub raw: Vec<f64>,
    /// Orthonormal bases of V₁ ⊃ V₂ ⊃ … ⊃ V_k at ω (empty if not estimated).
    #[serde(skip)]
    pub subspaces: Vec<Mat>,
    /// Spectral gap a.
    pub gap: f64,
    /// Estimation horizon T.
    pub horizon: f64,
    /// Clustering tolerance used for the multiplicities.
    pub cluster_tol: f64,
    /// Largest change of the running exponents between 3T/4 and T.
    pub drift: f64,
}

impl LyapunovSpectrum {
    /// Validated spectrum from explicit data.
    pub fn new(
        exponents: Vec<f64>,
        multiplicities: Vec<usize>,
        subspaces: Vec<Mat>,
        gap: f64,
        horizon: f64,
    ) -> Result<Self> {
        let raw = exponents
            .iter()
            .zip(&multiplicities)
            .flat_map(|(&l, &d)| core::iter::repeat(l).take(d))
            .collect();
        let s = Self {
            exponents,
            multiplicities,
            raw,
            subspaces,
            gap,
            horizon,
            cluster_tol: DEFAULT_CLUSTER_TOL,
            drift: 0.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Check ordering, multiplicities, gap disjointness and the filtration chain.
    pub fn validate(&self) -> Result<()> {
        if self.exponents.is_empty() || self.exponents.len() != self.multiplicities.len() {
            return Err(Error::config("spectrum needs one multiplicity per exponent"));
        }
        if self.multiplicities.iter().any(|&d| d == 0) {
            return Err(Error::config("multiplicities must be positive"));
        }
        if !(self.gap > 0.0) || !self.gap.is_finite() {
            return Err(Error::config("spectral gap a must be positive"));
        }
        for w in self.exponents.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::config("exponents must be strictly decreasing"));
            }
            if !(w[0] - self.gap > w[1] + self.gap) {
                return Err(Error::config("intervals [λ_i − a, λ_i + a] overlap"));
            }
        }
        if !self.subspaces.is_empty() {
            if self.subspaces.len() != self.exponents.len() {
                return Err(Error::config("one subspace per exponent is required"));
            }
            let n = self.dim();
            let mut expected = n;
            for (v, &d) in self.subspaces.iter().zip(&self.multiplicities) {
                if v.nrows() != n || v.ncols() != expected {
                    return Err(Error::config("subspace dimensions do not match the multiplicities"));
                }
                expected -= d;
            }
        }
        Ok(())
    }

    /// State dimension Σ d_i.
    pub fn dim(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    /// Top exponent λ₁.
    pub fn top(&self) -> f64 {
        self.exponents[0]
    }

    /// Whether λ₁ + a < 0.
    pub fn is_stable(&self) -> bool {
        self.top() + self.gap < 0.0
    }

    /// α = −λ₁ − a, or a not-uniformly-stable error.
    pub fn alpha(&self) -> Result<f64> {
        if self.top() >= 0.0 || !self.is_stable() {
            return Err(Error::NotUniformlyStable { lambda1: self.top() });
        }
        Ok(-self.top() - self.gap)
    }

    /// Replace the gap, re-checking disjointness.
    pub fn with_gap(mut self, gap: f64) -> Result<Self> {
        self.gap = gap;
        self.validate()?;
        Ok(self)
    }

    /// Whether the filtration was estimated.
    pub fn has_filtration(&self) -> bool {
        !self.subspaces.is_empty()
    }
}

/// Default clustering tolerance.
pub const DEFAULT_CLUSTER_TOL: f64 = 0.05;

/// Parameters of the QR estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumConfig {
    /// Re-orthonormalization interval Δ_qr.
    pub qr_interval: f64,
    /// Clustering tolerance.
    pub cluster_tol: f64,
    /// Spectral gap override; default min(0.25·min-gap, −0.5·λ₁).
    pub gap: Option<f64>,
    /// Initial orthonormal frame; default is a fixed generic frame.
    pub frame: Option<Mat>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            qr_interval: 1.0,
            cluster_tol: DEFAULT_CLUSTER_TOL,
            gap: None,
            frame: None,
        }
    }
}

/// A fixed generic orthonormal frame.
pub fn generic_frame(n: usize) -> Mat {
    let pts = sampling::latin_hypercube(0x5eed, n, n);
    let mut m = Mat::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] += 0.8 * (2.0 * pts[j][i] - 1.0);
        }
    }
    let q = linalg::orthonormal_basis(&m);
    if q.ncols() == n {
        q
    } else {
        Mat::identity(n, n)
    }
}

/// Group sorted exponents: neighbours within 2·tol share a cluster.
pub(crate) fn cluster(raw_sorted: &[f64], tol: f64) -> (Vec<f64>, Vec<usize>) {
    let mut exps: Vec<f64> = Vec::new();
    let mut mults: Vec<usize> = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &x) in raw_sorted.iter().enumerate() {
        if i > 0 && raw_sorted[i - 1] - x > 2.0 * tol {
            exps.push(sum / count as f64);
            mults.push(count);
            sum = 0.0;
            count = 0;
        }
        sum += x;
        count += 1;
    }
    exps.push(sum / count as f64);
    mults.push(count);
    (exps, mults)
}

/// Default gap a = min(0.25·min-gap, −0.5·λ₁); for non-negative λ₁ the stability term is dropped.
pub(crate) fn default_gap(exps: &[f64], tol: f64) -> f64 {
    let min_gap = exps.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let quarter = 0.25 * min_gap;
    let top = exps[0];
    if top < 0.0 {
        quarter.min(-0.5 * top)
    } else if quarter.is_finite() {
        quarter
    } else {
        (0.5 * top.abs()).max(tol)
    }
}

pub(crate) struct QrRun {
    pub raw: Vec<f64>,
    pub raw_early: Vec<f64>,
    pub rs: Vec<Mat>,
    pub frame: Mat,
    pub horizon: f64,
}

/// Assemble a spectrum from a QR run.
pub(crate) fn finish_spectrum(run: QrRun, config: &SpectrumConfig) -> Result<LyapunovSpectrum> {
    let tol = config.cluster_tol;
    let drift = run
        .raw
        .iter()
        .zip(&run.raw_early)
        .fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
    let mut sorted = run.raw.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let (exponents, multiplicities) = cluster(&sorted, tol);
    let gap = match config.gap {
        Some(g) => g,
        None => default_gap(&exponents, tol),
    };
    let descending = run.raw.windows(2).all(|w| w[0] >= w[1] - 2.0 * tol);
    let subspaces = if descending {
        filtration_from_r(&run.rs, &run.frame, &multiplicities)?
    } else {
        Vec::new()
    };
    let spectrum = LyapunovSpectrum {
        exponents,
        multiplicities,
        raw: run.raw,
        subspaces,
        gap,
        horizon: run.horizon,
        cluster_tol: tol,
        drift,
    };
    if !(drift <= tol) {
        return Err(Error::EstimationUncertainty {
            reason: format!("running exponents moved by {drift:.3e} between 3T/4 and T"),
            partial: Some(Box::new(spectrum)),
        });
    }
    spectrum.validate()?;
    Ok(spectrum)
}

fn filtration_from_r(rs: &[Mat], frame: &Mat, mults: &[usize]) -> Result<Vec<Mat>> {
    let n = frame.nrows();
    let mut c = Mat::identity(n, n);
    for r in rs.iter().rev() {
        c = r
            .solve_upper_triangular(&c)
            .ok_or_else(|| Error::EstimationUncertainty {
                reason: format!("singular R factor in the QR run"),
                partial: None,
            })?;
        for mut col in c.column_iter_mut() {
            let nrm = col.norm();
            if nrm > 0.0 {
                col /= nrm;
            }
        }
    }
    let mut out = Vec::with_capacity(mults.len());
    let mut start = 0;
    for (i, &d) in mults.iter().enumerate() {
        if i == 0 {
            out.push(Mat::identity(n, n));
        } else {
            let cols = c.columns(start, n - start).into_owned();
            out.push(linalg::orthonormal_basis(&(frame * cols)));
        }
        start += d;
    }
    Ok(out)
}

/// Discrete-QR Lyapunov spectrum of the linear part over `[0, horizon]` with step `dt`.
pub fn lyapunov_qr(
    sys: &SystemSpec,
    omega: &MdsShift,
    horizon: f64,
    dt: f64,
    config: &SpectrumConfig,
) -> Result<LyapunovSpectrum> {
    if !(horizon > 0.0) || !(config.qr_interval > 0.0) || !(config.cluster_tol > 0.0) {
        return Err(Error::config("horizon, qr_interval and cluster_tol must be positive"));
    }
    sys.require_coverage(omega, 0.0, horizon)?;
    let n = sys.dim();
    let steps = flow::step_count(0.0, horizon, dt)?;
    let per_qr = ((config.qr_interval / dt).round() as usize).max(1);
    let frame = match &config.frame {
        Some(f) if f.nrows() == n && f.ncols() == n => linalg::orthonormal_basis(f),
        Some(_) => return Err(Error::config("initial frame has the wrong shape")),
        None => generic_frame(n),
    };
    let dynm = sys.dynamics();
    let mut f = |t: f64, y: &Mat| dynm.linear(t, omega) * y;
    let early_step = (3 * steps) / 4;
    let mut sums = alloc::vec![0.0; n];
    let mut early = None;
    let mut rs = Vec::new();
    let mut y = frame.clone();
    let mut k = 0;
    while k < steps {
        let block = per_qr.min(steps - k);
        for j in 0..block {
            let t = (k + j) as f64 * dt;
            y = flow::step(&mut f, t, &y, dt);
        }
        k += block;
        flow::guard(&y, k as f64 * dt, k)?;
        let (q, r) = signed_qr(y);
        for (i, s) in sums.iter_mut().enumerate() {
            *s += r[(i, i)].ln();
        }
        rs.push(r);
        y = q;
        if early.is_none() && k >= early_step {
            let te = k as f64 * dt;
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
    finish_spectrum(
        QrRun {
            raw,
            raw_early,
            rs,
            frame,
            horizon,
        },
        config,
    )
}

/// QR with a positive diagonal in R.
pub(crate) fn signed_qr(y: Mat) -> (Mat, Mat) {
    let qr = y.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    (q, r)
}

/// Oseledets filtration V₁ ⊃ … ⊃ V_k at ω from a forward QR run.
pub fn oseledets_filtration(
    sys: &SystemSpec,
    omega: &MdsShift,
    horizon: f64,
    dt: f64,
    config: &SpectrumConfig,
) -> Result<Vec<Mat>> {
    let spectrum = lyapunov_qr(sys, omega, horizon, dt, config)?;
    filtration_of(spectrum)
}

pub(crate) fn filtration_of(spectrum: LyapunovSpectrum) -> Result<Vec<Mat>> {
    let tol = spectrum.cluster_tol;
    let mut sorted = spectrum.raw.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let ambiguous = sorted.windows(2).any(|w| {
        let g = w[0] - w[1];
        g > 2.0 * tol && g <= 4.0 * tol
    });
    if ambiguous {
        return Err(Error::EstimationUncertainty {
            reason: format!("exponent gap between 2 and 4 cluster tolerances"),
            partial: Some(Box::new(spectrum)),
        });
    }
    if !spectrum.has_filtration() {
        return Err(Error::EstimationUncertainty {
            reason: format!("QR columns are not ordered; the initial frame is not generic"),
            partial: Some(Box::new(spectrum)),
        });
    }
    Ok(spectrum.subspaces)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustering_joins_close_values() {
        let (e, m) = cluster(&[-0.97, -1.03, -2.0], 0.05);
        assert_eq!(m, alloc::vec![2, 1]);
        assert!((e[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_gap_rule() {
        assert!((default_gap(&[-1.0, -2.0], 0.05) - 0.25).abs() < 1e-15);
        assert!((default_gap(&[-1.0], 0.05) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spectrum_rejects_overlap() {
        let r = LyapunovSpectrum::new(alloc::vec![-1.0, -1.2], alloc::vec![1, 1], Vec::new(), 0.2, 1.0);
        assert!(matches!(r, Err(Error::Config(_))));
        let r = LyapunovSpectrum::new(alloc::vec![-1.0], alloc::vec![1], Vec::new(), 0.0, 1.0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn generic_frame_is_orthonormal() {
        let q = generic_frame(3);
        assert!((q.transpose() * &q - Mat::identity(3, 3)).norm() < 1e-12);
    }
}
