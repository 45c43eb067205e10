use super::*;
use crate::flow::{flow_map, Dynamics};
use crate::spectrum::lyapunov_qr;
use crate::systems::{ts4, ts5};
use crate::timebase::{generate_wiener, NoisePath};
use proptest::prelude::*;

/// dx = −x dt + b sin x∘dW.
struct SineDiffusion {
    b: f64,
}

impl SdeFields for SineDiffusion {
    fn dim(&self) -> usize {
        1
    }

    fn noise_dims(&self) -> usize {
        1
    }

    fn field(&self, j: usize, x: &[f64], out: &mut [f64]) {
        out[0] = if j == 0 { -x[0] } else { self.b * x[0].sin() };
    }

    fn jacobian(&self, j: usize, x: &[f64], out: &mut [f64]) -> bool {
        out[0] = if j == 0 { -1.0 } else { self.b * x[0].cos() };
        true
    }
}

fn sine(b: f64) -> SdeSystem {
    SdeSystem::new("sine", Arc::new(SineDiffusion { b })).unwrap()
}

fn path(seed: u64, lo: f64, hi: f64, dt: f64) -> Arc<NoisePath> {
    Arc::new(generate_wiener(seed, 1, TimeGrid::new(lo, hi, dt).unwrap()).unwrap())
}

fn v(x: f64) -> Vector {
    Vector::from_element(1, x)
}

/// ∫_{t−t_hist}^{t} e^{s−τ} dW_s by trapezoidal weights on the path nodes.
fn weighted_integral(omega: &MdsShift, tau: f64, t: f64, t_hist: f64) -> f64 {
    let h = omega.dt();
    let steps = (t_hist / h).round() as usize;
    (0..steps)
        .map(|j| {
            let s = t - (steps - j) as f64 * h;
            let dw = omega.value(0, s + h) - omega.value(0, s);
            0.5 * ((s - tau).exp() + (s + h - tau).exp()) * dw
        })
        .sum()
}

#[test]
fn noiseless_heun_matches_exponential_decay() {
    let sys = SdeSystem::new(
        "decay",
        Arc::new(LinearSde {
            a: Mat::from_element(1, 1, -1.0),
            b: vec![Mat::zeros(1, 1)],
        }),
    )
    .unwrap();
    let omega = MdsShift::new(path(1, 0.0, 1.0, 1e-3));
    let x = sde_flow(&sys, &omega, &v(2.0), 1.0, 1e-3).unwrap();
    assert!((x[0] - 2.0 * (-1.0f64).exp()).abs() <= 1e-3);
}

#[test]
fn zero_path_is_deterministic_heun() {
    let sys = ts5().unwrap();
    let grid = TimeGrid::new(0.0, 2.0, 1e-2).unwrap();
    let omega = MdsShift::new(Arc::new(NoisePath::zero(1, grid).unwrap()));
    let traj = heun_stratonovich(&sys, &omega, &v(0.7), &grid).unwrap();
    let f = |x: f64| -x + 0.1 * x.sin();
    let mut x = 0.7;
    for _ in 0..grid.steps() {
        let k1 = f(x);
        let k2 = f(x + 1e-2 * k1);
        x += 0.5e-2 * (k1 + k2);
    }
    assert!((traj.last()[0] - x).abs() <= 1e-12);
}

#[test]
fn heun_strong_error_is_first_order() {
    let sys = ts4(-1.0, 0.3).unwrap();
    for seed in 0..20 {
        let omega = MdsShift::new(path(seed, 0.0, 1.0, 1e-3));
        let exact = (-1.0 + 0.3 * omega.value(0, 1.0)).exp();
        let x = sde_flow(&sys, &omega, &v(1.0), 1.0, 1e-3).unwrap();
        assert!((x[0] - exact).abs() <= 5.0 * 1e-3, "seed {seed}");
    }
}

#[test]
fn stationary_flow_without_diffusion_is_identity() {
    let sys = SdeSystem::new("ode", Arc::new(ScalarSde::new(-1.0, 0.1, 0.0))).unwrap();
    let omega = MdsShift::new(path(2, -25.0, 5.0, 1e-2));
    let field = CohomologyField::new(&sys, &omega, CohomologyConfig::default()).unwrap();
    for x in [-1.5, 0.0, 0.4] {
        assert_eq!(field.stationary_flow(&v(x), 0.3, 1.0).unwrap()[0], x);
        assert_eq!(field.h0(&v(x)).unwrap()[0], x);
        assert_eq!(field.gamma0(&v(x)).unwrap()[0], 0.0);
        assert_eq!(field.g(&v(x)).unwrap()[0], -x + 0.1 * x.sin());
    }
}

#[test]
fn stationary_flow_matches_weighted_sum() {
    let sys = ts4(-1.0, 0.3).unwrap();
    let omega = MdsShift::new(path(3, -22.0, 2.0, 1e-3));
    let field = CohomologyField::new(&sys, &omega, CohomologyConfig::default()).unwrap();
    for (tau, t) in [(0.0, 0.0), (0.5, 1.0), (1.0, 0.5)] {
        let exact = 1.3 * (0.3 * weighted_integral(&omega, tau, t, 20.0)).exp();
        let got = field.stationary_flow(&v(1.3), tau, t).unwrap()[0];
        assert!(((got - exact) / exact).abs() <= 1e-2, "τ = {tau}, t = {t}");
    }
}

#[test]
fn anchor_identity_is_exact() {
    let base = path(4, -25.0, 5.0, 1e-2);
    let omega = MdsShift::new(base.clone());
    let cfg = CohomologyConfig::default();
    let sys = sine(0.3);
    let engine = Cohomology::new(&sys, cfg).unwrap();
    for t in [0.0, 0.37, 2.0] {
        let shifted = omega.shift(t).unwrap();
        let field = CohomologyField::new(&sys, &shifted, cfg).unwrap();
        let x = v(0.8);
        assert_eq!(engine.stationary_flow(&omega, &x, t, t).unwrap(), field.h0(&x).unwrap());
    }
    let lin = ts4(-1.0, 0.3).unwrap();
    let engine = Cohomology::new(&lin, cfg).unwrap();
    let field = CohomologyField::new(&lin, &omega.shift(1.0).unwrap(), cfg).unwrap();
    let a = engine.stationary_flow(&omega, &v(0.8), 1.0, 1.0).unwrap()[0];
    let b = field.h0(&v(0.8)).unwrap()[0];
    assert!((a - b).abs() <= 1e-12 * a.abs());
}

#[test]
fn scalar_linear_cohomology_has_closed_form() {
    let (lambda, b) = (-1.0, 0.3);
    let sys = ts4(lambda, b).unwrap();
    let omega = MdsShift::new(path(5, -25.0, 5.0, 1e-3));
    let field = CohomologyField::new(&sys, &omega, CohomologyConfig::default()).unwrap();
    let u0 = weighted_integral(&omega, 0.0, 0.0, 20.0);
    let y = v(0.6);
    let h = 0.6 * (b * u0).exp();
    let jet = field.engine().jet(&omega, 0.0, &y).unwrap();
    assert!(((jet.h[0] - h) / h).abs() <= 1e-2);
    assert!(((jet.gamma[0] + b * u0 * h) / (b * u0 * h)).abs() <= 2e-2);
    let g = field.g(&y).unwrap()[0];
    let exact = (lambda + b * u0) * 0.6;
    assert!(((g - exact) / exact).abs() <= 2e-2);
}

#[test]
fn fixed_point_is_preserved() {
    let omega = MdsShift::new(path(6, -25.0, 5.0, 1e-2));
    let zero = v(0.0);
    for sys in [ts5().unwrap(), sine(0.4)] {
        let field = CohomologyField::new(&sys, &omega, CohomologyConfig::default()).unwrap();
        assert!(field.h0(&zero).unwrap().norm() <= 1e-12);
        assert!(field.gamma0(&zero).unwrap().norm() <= 1e-12);
        assert!(field.g(&zero).unwrap().norm() <= 1e-12);
    }
}

#[test]
fn nonlinear_diffusion_jet_matches_differences() {
    let omega = MdsShift::new(path(7, -25.0, 5.0, 1e-2));
    let sys = sine(0.4);
    let engine = Cohomology::new(&sys, CohomologyConfig::default()).unwrap();
    let y = v(0.5);
    let jet = engine.jet(&omega, 0.5, &y).unwrap();
    let h = 1e-5;
    let fd = (engine.h(&omega, 0.5, &v(0.5 + h)).unwrap()[0] - engine.h(&omega, 0.5, &v(0.5 - h)).unwrap()[0]) / (2.0 * h);
    assert!((jet.dh[(0, 0)] - fd).abs() <= 1e-6);
    let dtau = 1e-4;
    let dz = (engine.stationary_flow(&omega, &y, 0.5 + dtau, 0.5).unwrap()[0]
        - engine.stationary_flow(&omega, &y, 0.5 - dtau, 0.5).unwrap()[0])
        / (2.0 * dtau);
    assert!((jet.gamma[0] - dz).abs() <= 1e-6);
    let x = v(-0.9);
    let back = engine.h(&omega, 0.0, &engine.h_inverse(&omega, 0.0, &x).unwrap()).unwrap();
    assert!((back - x).norm() <= 1e-10);
    let a = engine.dg_zero(&omega, 0.2).unwrap()[(0, 0)];
    let e = 1e-6;
    let fd = (engine.g(&omega, 0.2, &v(e)).unwrap()[0] - engine.g(&omega, 0.2, &v(-e)).unwrap()[0]) / (2.0 * e);
    assert!((a - fd).abs() <= 1e-4);
}

#[test]
fn newton_failure_is_out_of_regime() {
    let omega = MdsShift::new(path(8, -25.0, 5.0, 1e-2));
    let cfg = CohomologyConfig {
        newton_max_iter: 1,
        newton_tol: 1e-300,
        ..CohomologyConfig::default()
    };
    let engine = Cohomology::new(&sine(0.4), cfg).unwrap();
    let err = engine.h_inverse(&omega, 0.0, &v(2.0)).unwrap_err();
    assert!(matches!(err, Error::OutOfRegime { .. }));
}

#[test]
fn tabulated_jets_match_direct_evaluation() {
    let base = path(9, -30.0, 10.0, 1e-2);
    let omega = MdsShift::new(base.clone());
    let sys = ts5().unwrap();
    let direct = Cohomology::new(&sys, CohomologyConfig::default()).unwrap();
    let mut table = direct.clone();
    table.tabulate(&base, -2.0, 2.0).unwrap();
    for t in [-2.0, -0.005, 0.0, 0.735, 2.0, 3.0] {
        let y = v(0.4);
        let a = direct.g(&omega, t, &y).unwrap()[0];
        let b = table.g(&omega, t, &y).unwrap()[0];
        assert!((a - b).abs() <= 1e-13, "t = {t}");
        let shifted = omega.shift(0.5).unwrap();
        let a = direct.h(&shifted, t - 0.5, &y).unwrap()[0];
        let b = table.h(&shifted, t - 0.5, &y).unwrap()[0];
        assert!((a - b).abs() <= 1e-13, "t = {t}");
    }
}

#[test]
fn conjugation_residual_is_small() {
    let base = path(10, -25.0, 5.0, 1e-2);
    let omega = MdsShift::new(base.clone());
    let mut engine = Cohomology::new(&ts5().unwrap(), CohomologyConfig::default()).unwrap();
    engine.tabulate(&base, -1.0, 2.0).unwrap();
    for x in [-0.8, 0.3, 1.0] {
        let r = cohomology_residual(&engine, &omega, &v(x), 1.0, 1e-2).unwrap();
        assert!(r <= 5e-2, "x = {x}: {r}");
    }
}

#[test]
fn induced_rde_preserves_the_spectrum() {
    let base = path(11, -25.0, 62.0, 1e-2);
    let omega = MdsShift::new(base.clone());
    let sys = ts5().unwrap();
    let cfg = SpectrumConfig::default();
    let sde = lyapunov_sde(&sys, &omega, 60.0, 1e-2, &cfg).unwrap();
    let mut engine = Cohomology::new(&sys, CohomologyConfig::default()).unwrap();
    engine.tabulate(&base, 0.0, 61.0).unwrap();
    let rde = engine.induced_system().unwrap();
    let qr = lyapunov_qr(&rde, &omega, 60.0, 1e-2, &cfg).unwrap();
    assert!((sde.top() - qr.top()).abs() <= 2.0 * cfg.cluster_tol, "{} vs {}", sde.top(), qr.top());
    assert!((sde.top() + 1.0).abs() <= 0.1);
}

#[test]
fn induced_rde_flow_reports_divergence_not_panics() {
    let omega = MdsShift::new(path(12, -25.0, 5.0, 1e-2));
    let engine = Cohomology::new(&ts5().unwrap(), CohomologyConfig::default()).unwrap();
    let rde = InducedRde::new(engine.clone());
    assert_eq!(rde.dim(), 1);
    let short = MdsShift::new(path(12, -1.0, 5.0, 1e-2));
    assert!(rde.rhs(0.0, &v(0.5), &short)[0].is_nan());
    let sys = engine.induced_system().unwrap();
    assert!(flow_map(&sys, &omega, 0.0, &v(0.5), 1.0, 1e-2).is_ok());
}

#[test]
fn linear_sde_pipeline_is_identity_level() {
    let base = path(13, -40.0, 102.0, 1e-2);
    let report = linearize_sde(&ts4(-1.0, 0.3).unwrap(), base, &PipelineConfig::default()).unwrap();
    assert!(report.pass, "{:?}", report.failures);
    assert!(report.max_end_to_end <= 1e-10);
    assert!(report.probes.iter().all(|p| !p.residuals.is_empty()));
}

#[test]
fn ts5_pipeline_passes() {
    let base = path(14, -40.0, 102.0, 1e-2);
    let report = linearize_sde(&ts5().unwrap(), base, &PipelineConfig::default()).unwrap();
    assert!(report.pass, "{:?}", report.failures);
    assert!(report.max_end_to_end <= 1e-1);
    assert!(report.probes.iter().any(|p| p.times.contains(&1.0)));
}

#[test]
fn unstable_sde_is_rejected_at_spectrum_stage() {
    let base = path(15, -40.0, 102.0, 1e-2);
    let err = linearize_sde(&ts4(0.2, 0.3).unwrap(), base, &PipelineConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Stage { stage: "spectrum", .. }), "{err:?}");
    assert!(matches!(err.root(), Error::NotUniformlyStable { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn linear_cohomology_inverts(x in -5.0f64..5.0, seed in 0u64..4) {
        let omega = MdsShift::new(path(seed, -25.0, 2.0, 1e-2));
        let engine = Cohomology::new(&ts5().unwrap(), CohomologyConfig::default()).unwrap();
        let y = engine.h_inverse(&omega, 0.5, &v(x)).unwrap();
        prop_assert!((engine.h(&omega, 0.5, &y).unwrap()[0] - x).abs() <= 1e-12 * (1.0 + x.abs()));
    }
}
