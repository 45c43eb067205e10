use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::flow::Dynamics;
use crate::systems::{ou_path, ts1, ts3, ts3_local};
use crate::timebase::{generate_wiener, NoisePath, TimeGrid};

const T_HIST: f64 = 20.0;

fn ts3_path(seed: u64) -> Arc<NoisePath> {
    Arc::new(ou_path(seed, -50.0, 105.0, 1e-2, T_HIST).unwrap())
}

fn v(x: f64) -> Vector {
    Vector::from_element(1, x)
}

/// ẋ = (−1 + 0.5 sin t)x with explicit time, not of shifted form.
struct ExplicitTime;

impl Dynamics for ExplicitTime {
    fn dim(&self) -> usize {
        1
    }

    fn linear(&self, t: f64, _omega: &MdsShift) -> Mat {
        Mat::from_element(1, 1, -1.0 + 0.5 * t.sin())
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::zeros(x.len())
    }
}

/// ẋ = −x/2 + q(t)x² with q(t) = 1 + 9(W(t) − W(t−1)).
struct Kicked;

impl Dynamics for Kicked {
    fn dim(&self) -> usize {
        1
    }

    fn linear(&self, _t: f64, _omega: &MdsShift) -> Mat {
        Mat::from_element(1, 1, -0.5)
    }

    fn nonlinear(&self, t: f64, x: &Vector, omega: &MdsShift) -> Vector {
        let q = 1.0 + 9.0 * (omega.value(0, t) - omega.value(0, t - 1.0));
        Vector::from_element(1, q * x[0] * x[0])
    }

    fn history(&self) -> f64 {
        1.0
    }

    fn noise_dims(&self) -> usize {
        1
    }
}

/// ẋ = −x + x².
struct Quadratic;

impl Dynamics for Quadratic {
    fn dim(&self) -> usize {
        1
    }

    fn linear(&self, _t: f64, _omega: &MdsShift) -> Mat {
        Mat::from_element(1, 1, -1.0)
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::from_element(1, x[0] * x[0])
    }
}

fn spec_of(name: &str, d: impl Dynamics + 'static) -> SystemSpec {
    let c = HypothesisConstants::new(1.0, 0.5, f64::MAX, f64::MAX).unwrap();
    SystemSpec::new(name, Arc::new(d), c).unwrap()
}

/// Path on [−60, 40] whose only increment is a unit step on [1.2, 1.21].
fn kicked_path() -> Arc<NoisePath> {
    let grid = TimeGrid::new(-60.0, 40.0, 1e-2).unwrap();
    let mut inc = vec![0.0; grid.steps()];
    inc[grid.index_of(1.2).unwrap()] = 1.0;
    Arc::new(NoisePath::from_increments(0, grid, vec![inc]).unwrap())
}

#[test]
fn cocycle_at_zero_time_is_identity() {
    let coc = cocycle_from_rde(&ts3(0.1, T_HIST).unwrap(), ts3_path(1), 1e-2, TOL_COCYCLE).unwrap();
    let x = v(0.731);
    assert_eq!(coc.psi(0.0, &x).unwrap(), x);
    assert_eq!(coc.psi_at(3.0, 0.0, &x).unwrap(), x);
}

#[test]
fn ts3_cocycle_property() {
    let coc = cocycle_from_rde(&ts3(0.1, T_HIST).unwrap(), ts3_path(2), 1e-2, TOL_COCYCLE).unwrap();
    for x in [-2.0, 0.3, 1.7] {
        assert!(coc.cocycle_residual(1.0, 1.0, &v(x)).unwrap() <= 1e-5);
    }
    assert!(coc.report().shifted_form_residual <= TOL_COCYCLE);
    assert!(coc.report().cocycle_residual <= TOL_COCYCLE);
}

#[test]
fn autonomous_cocycle_ignores_the_path() {
    let sys = ts1(0.2).unwrap();
    let grid = TimeGrid::new(-5.0, 5.0, 1e-2).unwrap();
    let a = cocycle_from_rde(&sys, Arc::new(generate_wiener(1, 1, grid).unwrap()), 1e-2, TOL_COCYCLE).unwrap();
    let b = cocycle_from_rde(&sys, Arc::new(generate_wiener(2, 1, grid).unwrap()), 1e-2, TOL_COCYCLE).unwrap();
    let x = v(1.3);
    assert!((a.psi(2.0, &x).unwrap() - b.psi(2.0, &x).unwrap()).norm() <= 1e-10);
}

#[test]
fn explicit_time_dependence_is_not_a_cocycle() {
    let sys = spec_of("explicit", ExplicitTime);
    let grid = TimeGrid::new(-5.0, 5.0, 1e-2).unwrap();
    let err = cocycle_from_rde(&sys, Arc::new(NoisePath::zero(1, grid).unwrap()), 1e-2, TOL_COCYCLE).unwrap_err();
    assert!(matches!(err, Error::NotACocycle { .. }), "{err:?}");
}

#[test]
fn zero_nonlinearity_gives_identity_conjugacy() {
    let coc = cocycle_from_rde(&ts3(0.0, T_HIST).unwrap(), ts3_path(3), 1e-2, TOL_COCYCLE).unwrap();
    let rc = RandomConjugacy::new(&coc, RandomConjugacyConfig::default()).unwrap();
    for x in [-3.0, 0.5, 4.0] {
        assert!((rc.h(0.0, &v(x)).unwrap() - v(x)).norm() <= 1e-12);
        assert!((rc.h(1.0, &v(x)).unwrap() - v(x)).norm() <= 1e-12);
    }
}

#[test]
fn ts3_random_conjugacy_certificate() {
    let coc = cocycle_from_rde(&ts3(0.1, T_HIST).unwrap(), ts3_path(4), 1e-2, TOL_COCYCLE).unwrap();
    let rc = RandomConjugacy::new(&coc, RandomConjugacyConfig::default()).unwrap();
    let k = rc.constants();
    assert!(k.lambda1 < -0.8 && k.lambda1 > -1.2, "{k:?}");
    assert!(k.l < k.alpha);
    let cert = rc.certify(&[0.5, 1.0, 2.0], 20, 5.0, 0, 1e-3, 1e-2).unwrap();
    assert!(cert.pass, "{:?}", cert.failures);
    assert!(cert.orbit_residuals.iter().all(|r| *r <= 1e-3));
    assert!(cert.min_determinant.is_none_or(|d| d > 0.0));
}

#[test]
fn unstable_linear_part_is_rejected() {
    let a = Mat::from_element(1, 1, 0.2);
    let sys = crate::systems::constant_linear("unstable", a, 1.0, 1.0).unwrap();
    let grid = TimeGrid::new(-5.0, 105.0, 1e-2).unwrap();
    let coc = cocycle_from_rde(&sys, Arc::new(NoisePath::zero(1, grid).unwrap()), 1e-2, TOL_COCYCLE).unwrap();
    let err = RandomConjugacy::new(&coc, RandomConjugacyConfig::default()).unwrap_err();
    assert!(matches!(err.root(), Error::NotUniformlyStable { .. }), "{err:?}");
}

#[test]
fn oversized_constants_are_rejected() {
    let coc = cocycle_from_rde(&ts3(0.1, T_HIST).unwrap(), ts3_path(5), 1e-2, TOL_COCYCLE).unwrap();
    let config = RandomConjugacyConfig {
        constants: Some((2.0, 2.0)),
        ..RandomConjugacyConfig::default()
    };
    let err = RandomConjugacy::new(&coc, config).unwrap_err();
    assert!(matches!(err, Error::HypothesisViolation { inequality: "K·L < α", .. }), "{err:?}");
}

#[test]
fn bump_profile_shape() {
    assert_eq!(bump(0.0), 1.0);
    assert_eq!(bump(1.0), 1.0);
    assert_eq!(bump(2.0), 0.0);
    assert_eq!(bump(7.0), 0.0);
    assert!((bump(1.5) - 0.5).abs() < 1e-15);
    let mut steepest: f64 = 0.0;
    let mut at = 0.0;
    for i in 1..20000 {
        let r = 1.0 + i as f64 / 20000.0;
        let d = bump_derivative(r);
        let fd = (bump(r + 1e-6) - bump(r - 1e-6)) / 2e-6;
        assert!((d - fd).abs() < 1e-6, "r = {r}");
        if d.abs() > steepest {
            steepest = d.abs();
            at = r;
        }
    }
    assert!((steepest - BUMP_SLOPE).abs() < 1e-6);
    assert!((at - 1.5).abs() < 1e-3);
}

#[test]
fn zero_nonlinearity_gets_maximal_radius() {
    let path = ts3_path(6);
    let cut = cutoff(&ts3(0.0, T_HIST).unwrap(), &path, 0.0, 2.0, &CutoffConfig::default()).unwrap();
    assert!(cut.sigmas().iter().all(|s| *s == 0.5));
}

#[test]
fn quadratic_cutoff_respects_budget() {
    let sys = spec_of("quadratic", Quadratic);
    let grid = TimeGrid::new(-1.0, 2.0, 1e-2).unwrap();
    let path = Arc::new(NoisePath::zero(1, grid).unwrap());
    let config = CutoffConfig {
        c: 1.0,
        l0: 0.5,
        ..CutoffConfig::default()
    };
    let cut = Arc::new(cutoff(&sys, &path, 0.0, 1.0, &config).unwrap());
    let omega = MdsShift::new(path.clone());
    let tilde = cut.system(&sys).unwrap();
    let dynm = tilde.dynamics();
    let sigma = cut.sigma_at(&omega, 0.0);
    assert!(sigma == 0.03125 || sigma == 0.015625, "{sigma}");
    let pairs = sampling::ball_pairs(11, 2000, 1, 1.5);
    let mut lip: f64 = 0.0;
    let mut sup: f64 = 0.0;
    for (x, y) in &pairs {
        let (fx, fy) = (dynm.nonlinear(0.3, x, &omega), dynm.nonlinear(0.3, y, &omega));
        lip = lip.max((&fx - &fy).norm() / (x - y).norm());
        sup = sup.max(fx.norm());
        if x.norm() >= 1.0 {
            assert_eq!(fx.norm(), 0.0);
        }
    }
    assert!(lip <= 0.5 * 1.01, "{lip}");
    assert!(sup <= lip * config.c);
    let integral = cut.lipschitz_integral(&sys, &omega).unwrap();
    assert!(integral <= 0.5 * (1.0 + config.tol_bound), "{integral}");
    for x in sampling::ball_points(3, 50, 1, sigma * 0.999) {
        assert_eq!(dynm.nonlinear(0.3, &x, &omega), Quadratic.nonlinear(0.3, &x, &omega));
    }
}

#[test]
fn global_lipschitz_nonlinearity_exceeds_small_budget() {
    let path = ts3_path(7);
    let config = CutoffConfig {
        l0: 0.1,
        max_level: 20,
        ..CutoffConfig::default()
    };
    let err = cutoff(&ts3(1.0, T_HIST).unwrap(), &path, 0.0, 1.0, &config).unwrap_err();
    assert!(matches!(err, Error::Budget { .. }), "{err:?}");
}

fn kicked_setup() -> (CocycleSpec, Arc<CutoffSpec>) {
    let sys = spec_of("kicked", Kicked);
    let path = kicked_path();
    let coc = cocycle_from_rde(&sys, path.clone(), 1e-2, TOL_COCYCLE).unwrap();
    let config = CutoffConfig {
        l0: 0.1,
        ..CutoffConfig::default()
    };
    let cut = Arc::new(cutoff(&sys, &path, -50.0, 5.0, &config).unwrap());
    (coc, cut)
}

#[test]
fn t_max_markers_and_kicked_exit() {
    let (coc, cut) = kicked_setup();
    let omega = coc.omega().clone();
    let s0 = cut.sigma_at(&omega, 0.0);
    assert!(cut.sigma_at(&omega, 1.2) <= s0 / 8.0);
    assert_eq!(cut.sigma_at(&omega, 1.19), s0);
    assert_eq!(t_max(&coc, &cut, &v(0.0), 3.0).unwrap(), TMax::Beyond);
    assert_eq!(t_max(&coc, &cut, &v(s0), 3.0).unwrap(), TMax::Finite(0.0));
    assert_eq!(t_max(&coc, &cut, &v(-1.5 * s0), 3.0).unwrap(), TMax::Finite(0.0));
    match t_max(&coc, &cut, &v(0.95 * s0), 3.0).unwrap() {
        TMax::Finite(t) => assert!((t - 1.2).abs() < 1e-9, "{t}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn kicked_local_report_is_windowed() {
    let (coc, cut) = kicked_setup();
    let config = LocalConfig {
        conjugacy: RandomConjugacyConfig {
            spectrum_horizon: 20.0,
            ..RandomConjugacyConfig::default()
        },
        probes: 4,
        ..LocalConfig::default()
    };
    let report = local_linearize(&coc, &cut, &config).unwrap();
    assert!(report.pass, "{:?}", report.failures);
    let exiting: Vec<_> = report.probes.iter().filter(|p| matches!(p.t_max, TMax::Finite(t) if (t - 1.2).abs() < 1e-9)).collect();
    assert!(!exiting.is_empty());
    for p in exiting {
        assert_eq!(p.times, vec![0.5, 1.0]);
        assert!(p.identity_gap <= 1e-6);
    }
}

#[test]
fn ts3_local_linearization() {
    let sys = ts3_local(T_HIST).unwrap();
    let path = ts3_path(8);
    let coc = cocycle_from_rde(&sys, path.clone(), 1e-2, TOL_COCYCLE).unwrap();
    let cut = Arc::new(cutoff(&sys, &path, -30.0, 5.0, &CutoffConfig::default()).unwrap());
    let omega = coc.omega().clone();
    let summary = cut.summary();
    assert!(summary.sigma_min > 0.0);
    let report = local_linearize(&coc, &cut, &LocalConfig::default()).unwrap();
    assert!(report.pass, "{:?}", report.failures);
    let s0 = cut.sigma_at(&omega, 0.0);
    let mut last = 0.0;
    let mut beyond = false;
    for j in 0..12 {
        let x = v(s0 * 0.5f64.powi(j));
        let t = match t_max(&coc, &cut, &x, 3.0).unwrap() {
            TMax::Finite(t) => t,
            TMax::Beyond => {
                beyond = true;
                f64::INFINITY
            }
        };
        assert!(t >= last);
        last = t;
    }
    assert!(beyond);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cutoff_sandwich(x in -2.0f64..2.0, t in 0.0f64..2.0) {
        let sys = spec_of("quadratic", Quadratic);
        let grid = TimeGrid::new(-1.0, 3.0, 1e-2).unwrap();
        let path = Arc::new(NoisePath::zero(1, grid).unwrap());
        let cut = Arc::new(cutoff(&sys, &path, 0.0, 2.5, &CutoffConfig::default()).unwrap());
        let omega = MdsShift::new(path);
        let tilde = cut.system(&sys).unwrap();
        let s = cut.sigma_at(&omega, t);
        let f = tilde.dynamics().nonlinear(t, &v(x), &omega)[0];
        if x.abs() < s {
            prop_assert_eq!(f, x * x);
        }
        if x.abs() >= 2.0 * s {
            prop_assert_eq!(f, 0.0);
        }
        prop_assert!(f.abs() <= cut.l0() * cut.c());
    }
}
