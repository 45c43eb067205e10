use std::sync::Arc;

use lincert_core::conjugacy::{ConjugacyField, ProbeSpec};
use lincert_core::systems;
use lincert_core::timebase::{MdsShift, NoisePath, TimeGrid};

fn field(eps: f64) -> ConjugacyField {
    let grid = TimeGrid::new(-1.0, 20.0, 5e-3).unwrap();
    let omega = MdsShift::new(Arc::new(NoisePath::zero(0, grid).unwrap()));
    ConjugacyField::standard(&systems::ts1(eps).unwrap(), &omega, 0.0, 5e-3).unwrap()
}

#[test]
fn ts1_topological_certificate() {
    let f = field(0.2);
    let cert = f.certify(&ProbeSpec::default()).unwrap();
    assert!((cert.l_g_theory - (1.0 + 0.2 / 1.8)).abs() < 1e-12);
    assert!(cert.conjugation_residual <= 1e-4);
    assert!(cert.inverse_residual <= 1e-4);
    assert!(cert.near_identity_empirical <= 0.2 * 1.001);
    assert!(cert.solution_contraction <= 1.001);
    for r in &cert.per_time {
        assert!(r.l_h_empirical <= r.l_h_theory * 1.01);
    }
    // The printed L_G does not bound G(1, ·) for this system: D₂G(1, −1.725) ≈ 1.144.
    assert!(cert.l_g_empirical > cert.l_g_theory * 1.01);
    assert_eq!(cert.failures.len(), 1, "{:?}", cert.failures);
    assert!(cert.failures[0].contains("L_G"));
    let local = cert.local_g_derivative.unwrap();
    assert!(local >= cert.l_g_empirical - 1e-3);
}

#[test]
fn ts1_g_derivative_exceeds_printed_lipschitz_constant() {
    let f = field(0.2);
    let eta = lincert_core::linalg::Vector::from_element(1, -1.725);
    let d = f.d2g(1.0, &eta).unwrap()[(0, 0)];
    assert!((d - 1.1443).abs() < 1e-3, "{d}");
    assert!(d > f.constants().lipschitz_g() * 1.01);
}

#[test]
fn ts1_smooth_certificate() {
    let f = field(0.2);
    let cert = f.certify_smooth(&ProbeSpec { residual_probes: 30, ..ProbeSpec::default() }).unwrap();
    assert!(cert.pass, "{:?}", cert.failures);
    assert!(cert.fd_relative_error <= 1e-4);
    assert!(cert.min_determinant > 0.0);
    assert!(cert.variational_ratio <= 1.001);
    println!("{cert:#?}");
}
