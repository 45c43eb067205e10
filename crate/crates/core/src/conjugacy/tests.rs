use alloc::sync::Arc;
use alloc::vec;

use proptest::prelude::*;

use super::*;
use crate::systems;
use crate::timebase::NoisePath;

const DT: f64 = 5e-3;

fn omega() -> MdsShift {
    let grid = TimeGrid::new(-1.0, 40.0, DT).unwrap();
    MdsShift::new(Arc::new(NoisePath::zero(0, grid).unwrap()))
}

fn ts1_field() -> ConjugacyField {
    ConjugacyField::standard(&systems::ts1(0.2).unwrap(), &omega(), 0.0, DT).unwrap()
}

fn linear_field() -> ConjugacyField {
    ConjugacyField::standard(&systems::ts1(0.0).unwrap(), &omega(), 0.0, DT).unwrap()
}

fn v(x: f64) -> Vector {
    Vector::from_element(1, x)
}

#[test]
fn op_l_closed_form_and_zero() {
    let f = linear_field();
    let p = f.op_l(0.0, &v(1.0)).unwrap();
    for (t, x) in f.grid().times().zip(p.values()) {
        assert!((x[0] - (-t).exp()).abs() < 1e-7);
    }
    assert_eq!(f.op_l(0.0, &v(0.0)).unwrap().sup_norm(&NormFamily::Ambient), 0.0);
}

#[test]
fn op_l_is_linear() {
    let f = ts1_field();
    let (a, b) = (0.7, -1.3);
    let l1 = f.op_l(1.0, &v(0.4)).unwrap();
    let l2 = f.op_l(1.0, &v(2.1)).unwrap();
    let l3 = f.op_l(1.0, &v(a * 0.4 + b * 2.1)).unwrap();
    for k in 0..l1.values().len() {
        let lhs = l3.values()[k][0];
        let rhs = a * l1.values()[k][0] + b * l2.values()[k][0];
        assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn op_l_norm_bound() {
    let f = ts1_field();
    let c = f.constants();
    let tau = 2.0;
    let p = f.op_l(tau, &v(1.5)).unwrap();
    let bound = c.k * (c.alpha * tau).exp() * 1.5;
    assert!(p.sup_norm(f.norms()) <= bound * 1.001);
}

#[test]
fn op_f_zero_nonlinearity() {
    let f = linear_field();
    let p = f.random_path(3, 4.0).unwrap();
    assert_eq!(f.sup_norm(&f.op_f(&p).unwrap()).unwrap(), 0.0);
}

#[test]
fn op_f_bounds_on_ts1() {
    let f = ts1_field();
    let r = f.operator_report(20, 5.0, 11, 0.0, &v(1.0)).unwrap();
    assert!(r.op_f_sup <= 0.2 * 1.001, "{r:?}");
    assert!(r.contraction_max <= 0.2 * 1.001, "{r:?}");
    assert!(r.picard_gap_ratio <= 0.25, "{r:?}");
    assert!(r.picard_iterations as f64 <= r.picard_iteration_bound, "{r:?}");
}

#[test]
fn fixed_point_of_linear_system_is_zero_after_one_iteration() {
    let f = linear_field();
    let run = f.picard(0.0, &v(2.0)).unwrap();
    assert_eq!(run.iterations, 1);
    assert!(run.path.iter().all(|x| x[0] == 0.0));
}

#[test]
fn fixed_point_shift_identity() {
    let f = ts1_field();
    let xi = v(1.2);
    let a = f.fixed_point(0.0, &xi).unwrap();
    let moved = f.op_l(0.0, &xi).unwrap().value(1.0).unwrap().clone();
    let b = f.fixed_point(1.0, &moved).unwrap();
    let gap = f.sup_norm(&a.difference(&b).unwrap()).unwrap();
    assert!(gap <= 2.0 * f.config().picard_tol, "{gap}");
}

#[test]
fn h_and_g_are_identity_without_nonlinearity() {
    let f = linear_field();
    for t in [0.0, 1.0, 3.0] {
        assert!((f.h(t, &v(1.7)).unwrap()[0] - 1.7).abs() < 1e-12);
        assert!((f.g(t, &v(-0.3)).unwrap()[0] + 0.3).abs() < 1e-12);
    }
}

#[test]
fn h_fixes_origin() {
    let f = ts1_field();
    assert_eq!(f.h(2.0, &v(0.0)).unwrap()[0], 0.0);
    assert_eq!(f.g(2.0, &v(0.0)).unwrap()[0], 0.0);
}

#[test]
fn h_matches_nonlinear_flow_of_pulled_back_state() {
    // H(t, ξ) is the state at t of the nonlinear solution through Φ(τ₀, t)ξ at τ₀.
    let f = ts1_field();
    let sys = systems::ts1(0.2).unwrap();
    for (t, x) in [(1.0, 0.8), (2.0, -2.5), (5.0, 4.0)] {
        let start = (t as f64).exp() * x;
        let oracle = flow::flow_map(&sys, f.omega(), 0.0, &v(start), t, 1e-4).unwrap();
        assert!((f.h(t, &v(x)).unwrap()[0] - oracle[0]).abs() < 1e-5);
    }
}

#[test]
fn g_matches_linear_push_of_backward_orbit() {
    let f = ts1_field();
    let sys = systems::ts1(0.2).unwrap();
    for (t, y) in [(1.0, 0.8), (2.0, -2.5), (5.0, 4.0)] {
        let back = flow::flow_map(&sys, f.omega(), t, &v(y), 0.0, 1e-4).unwrap();
        let oracle = (-(t as f64)).exp() * back[0];
        assert!((f.g(t, &v(y)).unwrap()[0] - oracle).abs() < 1e-5);
    }
}

#[test]
fn g_inverts_h() {
    let f = ts1_field();
    for t in [0.0, 1.0, 2.0, 5.0] {
        for x in [-4.0, -1.0, 0.3, 2.2, 5.0] {
            let h = f.h(t, &v(x)).unwrap();
            assert!((f.g(t, &h).unwrap()[0] - x).abs() <= 1e-4);
            let g = f.g(t, &v(x)).unwrap();
            assert!((f.h(t, &g).unwrap()[0] - x).abs() <= 1e-4);
        }
    }
}

#[test]
fn conjugation_residuals() {
    let lin = linear_field();
    assert!(lin.conjugation_residual(0.0, 3.0, &v(1.0)).unwrap() < 1e-10);
    let f = ts1_field();
    let r = f.conjugation_residual(0.0, 3.0, &v(1.0)).unwrap();
    assert!(r <= 1e-4, "{r}");
    let moved = f.op_l(0.0, &v(1.0)).unwrap().value(1.0).unwrap().clone();
    let r2 = f.conjugation_residual(1.0, 3.0, &moved).unwrap();
    assert!((r - r2).abs() <= 2e-4);
}

#[test]
fn d2g_formula_matches_finite_differences() {
    let f = ts1_field();
    let d = f.d2g(2.0, &v(0.7)).unwrap();
    let fd = f.d2g_finite_difference(2.0, &v(0.7), 1e-5).unwrap();
    assert!(((d[(0, 0)] - fd[(0, 0)]) / d[(0, 0)]).abs() <= 1e-4);
    assert!(d.determinant() > 0.0);
    let lin = linear_field();
    let id = lin.d2g(3.0, &v(0.4)).unwrap();
    assert!((id[(0, 0)] - 1.0).abs() < 1e-10);
}

#[test]
fn d2g_requires_derivatives() {
    struct NoDerivative;
    impl crate::flow::Dynamics for NoDerivative {
        fn dim(&self) -> usize {
            1
        }
        fn linear(&self, _t: f64, _o: &MdsShift) -> Mat {
            Mat::from_element(1, 1, -1.0)
        }
        fn nonlinear(&self, _t: f64, x: &Vector, _o: &MdsShift) -> Vector {
            x.map(|y| 0.1 * y.sin())
        }
    }
    let c = HypothesisConstants::new(1.0, 1.0, 0.1, 0.1).unwrap();
    let sys = SystemSpec::new("nd", Arc::new(NoDerivative), c).unwrap();
    let f = ConjugacyField::standard(&sys, &omega(), 0.0, DT).unwrap();
    assert!(matches!(f.d2g(1.0, &v(0.1)), Err(Error::MissingDerivative { .. })));
}

#[test]
fn hypothesis_gate() {
    let sys = systems::ts1(1.5).unwrap();
    let err = ConjugacyField::standard(&sys, &omega(), 0.0, DT).unwrap_err();
    assert!(matches!(err, Error::HypothesisViolation { .. }));
}

#[test]
fn lipschitz_theory_value() {
    let f = ts1_field();
    assert!((f.constants().lipschitz_g() - (1.0 + 0.2 / 1.8)).abs() < 1e-12);
}

#[test]
fn certificate_without_nonlinearity() {
    let f = linear_field();
    let probes = ProbeSpec {
        times: vec![0.0, 1.0],
        pairs: 10,
        residual_probes: 10,
        ..ProbeSpec::default()
    };
    let c = f.certify(&probes).unwrap();
    assert!(c.pass, "{:?}", c.failures);
    assert!(c.conjugation_residual < 1e-10 && c.inverse_residual < 1e-12);
    assert!((c.l_h_empirical - 1.0).abs() < 1e-6 && (c.l_g_empirical - 1.0).abs() < 1e-6);
}

#[test]
fn midpoint_interpolation_is_exact_for_cubics() {
    let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 0.25 * x * x * x;
    let vals: alloc::vec::Vec<Vector> = (0..6).map(|k| v(p(k as f64))).collect();
    for (k, m) in midpoints(&vals).iter().enumerate() {
        assert!((m[0] - p(k as f64 + 0.5)).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn near_identity_holds(x in -5.0f64..5.0, k in 0usize..4) {
        let f = ts1_field();
        let t = [0.0, 1.0, 2.0, 5.0][k];
        let h = f.h(t, &v(x)).unwrap();
        prop_assert!((h[0] - x).abs() <= 0.2 * 1.001);
    }

    #[test]
    fn h_is_monotone(x in -5.0f64..5.0, dx in 1e-3f64..2.0) {
        let f = ts1_field();
        let a = f.h(2.0, &v(x)).unwrap()[0];
        let b = f.h(2.0, &v(x + dx)).unwrap()[0];
        prop_assert!(b > a);
    }
}
