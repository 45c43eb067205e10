use std::sync::Arc;

use lincert_core::flow::{evolution_operator, transition, Dynamics, HypothesisConstants, SystemSpec};
use lincert_core::linalg::{Mat, Vector};
use lincert_core::spectrum::{lyapunov_qr, weighted_operator_norm, AdaptedNormFamily, NormConfig, SpectrumConfig};
use lincert_core::systems;
use lincert_core::timebase::{generate_wiener, MdsShift, NoisePath, TimeGrid};
use proptest::prelude::*;

fn zero_omega(lo: f64, hi: f64, dt: f64) -> MdsShift {
    MdsShift::new(Arc::new(NoisePath::zero(1, TimeGrid::new(lo, hi, dt).unwrap()).unwrap()))
}

/// ẋ = diag(−1 + 0.3 sin W_t, −2)x with an off-diagonal coupling, a non-normal two-class random system.
struct Coupled;

impl Dynamics for Coupled {
    fn dim(&self) -> usize {
        2
    }

    fn linear(&self, t: f64, omega: &MdsShift) -> Mat {
        Mat::from_row_slice(2, 2, &[-1.0 + 0.3 * omega.value(0, t).sin(), 0.5, 0.0, -2.0])
    }

    fn nonlinear(&self, _t: f64, x: &Vector, _omega: &MdsShift) -> Vector {
        Vector::zeros(x.len())
    }

    fn noise_dims(&self) -> usize {
        1
    }
}

#[test]
fn ts2_evolution_identities_at_fine_step() {
    let sys = systems::ts2().unwrap();
    let omega = zero_omega(-1.0, 6.0, 1e-3);
    let id = Mat::identity(2, 2);
    for (t, s) in [(0.0, 5.0), (1.3, 4.2), (5.0, 0.0)] {
        assert!((transition(&sys, &omega, t, t, 1e-3).unwrap() - &id).amax() <= 1e-10);
        let ts = transition(&sys, &omega, t, s, 1e-3).unwrap();
        let st = transition(&sys, &omega, s, t, 1e-3).unwrap();
        assert!((&ts * st - &id).amax() <= 1e-6);
        let exact = Mat::from_diagonal(&Vector::from_vec(vec![(-(t - s)).exp(), (-2.0 * (t - s)).exp()]));
        assert!((ts - exact).amax() <= 1e-6 * (2.0 * (s - t)).exp().max(1.0));
    }
}

#[test]
fn two_class_random_family_stays_bounded_and_adapted() {
    let sys = SystemSpec::new("coupled", Arc::new(Coupled), HypothesisConstants::new(1.0, 0.5, 0.0, 0.0).unwrap()).unwrap();
    let omega = MdsShift::new(Arc::new(generate_wiener(3, 1, TimeGrid::new(-1.0, 160.0, 1e-2).unwrap()).unwrap()));
    let spec = lyapunov_qr(&sys, &omega, 100.0, 1e-2, &SpectrumConfig::default()).unwrap();
    assert_eq!(spec.exponents.len(), 2);
    let grid = TimeGrid::new(0.0, 6.0, 1e-2).unwrap();
    let family = AdaptedNormFamily::along_orbit(&sys, &omega, &spec, &grid, &NormConfig::default()).unwrap();
    let evo = evolution_operator(&sys, &omega, 0.0, &grid).unwrap();
    let c = spec.top() + spec.gap;
    for k in (20..grid.len()).step_by(50) {
        let w = weighted_operator_norm(evo.at_index(k), family.at(0), family.at(k)).unwrap();
        // Gram truncation and trapezoid quadrature leave a small slack.
        assert!(w <= 1.01 * (c * grid.node(k)).exp(), "k = {k}: {w}");
    }
    assert!((0..grid.len()).all(|k| family.ell(k).is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn transition_cocycle_on_ts2(s in 0u32..50, r in 0u32..50, t in 0u32..50) {
        let sys = systems::ts2().unwrap();
        let omega = zero_omega(-1.0, 6.0, 1e-2);
        let (s, r, t) = (s as f64 * 0.1, r as f64 * 0.1, t as f64 * 0.1);
        let direct = transition(&sys, &omega, t, s, 1e-2).unwrap();
        let composed = transition(&sys, &omega, t, r, 1e-2).unwrap() * transition(&sys, &omega, r, s, 1e-2).unwrap();
        prop_assert!((composed - &direct).amax() <= 1e-6 * direct.amax().max(1.0));
    }
}
