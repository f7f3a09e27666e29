use std::collections::BTreeMap;
use std::f64::consts::PI;

use fundet::expr::parse;
use fundet::gy::{gy_determinant, SignConvention, SlOperator1D};
use fundet::ode::Storage;
use fundet::semiclassical::{
    action, classical_trajectory, discrete_fluctuation_det, fluctuation_prefactor, harmonic_trajectory,
    propagator_estimate, Potential, SemiclassicalError,
};
use proptest::prelude::*;

fn harmonic_potential(mass: f64, omega: f64) -> Potential {
    let mut params = BTreeMap::new();
    params.insert("m".to_string(), mass);
    params.insert("w".to_string(), omega);
    Potential::new(parse("0.5*m*w^2*x^2").unwrap(), &["x"], params)
}

/// |K| of the exact (Mehler) kernel; `omega = 0` is the free particle.
fn exact_amplitude(mass: f64, omega: f64, t: f64, hbar: f64) -> f64 {
    let eff = if omega == 0.0 { t } else { (omega * t).sin().abs() / omega };
    (mass / (2.0 * PI * hbar * eff)).sqrt()
}

#[test]
fn quadratic_potentials_are_exact() {
    let cases = [
        (1.0, 0.0, 1.0, 1.0),
        (2.0, 0.0, 0.5, 0.3),
        (1.0, 1.0, PI / 2.0, 1.0),
        (0.5, 2.0, 1.1, 0.05),
        (3.0, 0.7, 6.0, 2.0),
    ];
    for (m, omega, t, hbar) in cases {
        let pot = harmonic_potential(m, omega);
        let est = propagator_estimate(&pot, m, 0.3, -0.8, 0.0, t, hbar, 4000, 1e-12).unwrap();
        let exact = exact_amplitude(m, omega, t, hbar);
        assert!((est.prefactor_magnitude - exact).abs() <= 1e-6 * exact, "{m} {omega} {t} {hbar}");

        let op = SlOperator1D::harmonic(m, omega, 0.0, t, SignConvention::RealTime).unwrap();
        let direct = fluctuation_prefactor(&op, hbar, 20_000).unwrap();
        assert!((direct.magnitude - exact).abs() <= 1e-6 * exact);
        assert_eq!(direct.morse_index, est.morse_index);
        assert_eq!(direct.morse_index, (omega * t / PI).floor() as usize);
    }
}

#[test]
fn caustic_is_reported() {
    let op = SlOperator1D::harmonic(1.0, 1.0, 0.0, PI, SignConvention::RealTime).unwrap();
    assert!(matches!(fluctuation_prefactor(&op, 1.0, 20_000), Err(SemiclassicalError::Caustic { .. })));
    let pot = harmonic_potential(1.0, 1.0);
    let err = propagator_estimate(&pot, 1.0, 0.0, 1.0, 0.0, PI, 1.0, 2000, 1e-10);
    assert!(matches!(err, Err(SemiclassicalError::ConjugatePoint { .. })), "{err:?}");
}

#[test]
fn morse_index_steps_at_conjugate_times() {
    let omega = 1.3;
    for k in 1..=4 {
        let tc = k as f64 * PI / omega;
        let before = SlOperator1D::harmonic(1.0, omega, 0.0, tc - 1e-3, SignConvention::RealTime).unwrap();
        let after = SlOperator1D::harmonic(1.0, omega, 0.0, tc + 1e-3, SignConvention::RealTime).unwrap();
        let i0 = fluctuation_prefactor(&before, 1.0, 40_000).unwrap().morse_index;
        let i1 = fluctuation_prefactor(&after, 1.0, 40_000).unwrap().morse_index;
        assert_eq!((i0, i1), (k - 1, k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prefactor_definition_is_consistent(
        mass in 0.1f64..5.0, omega in 0.0f64..3.0, t in 0.1f64..4.0, hbar in 0.01f64..3.0,
    ) {
        let op = SlOperator1D::harmonic(mass, omega, 0.0, t, SignConvention::RealTime).unwrap();
        let gy = gy_determinant(&op, 4000, Storage::BoundaryOnly).unwrap().value;
        prop_assume!(gy.abs() > 1e-3);
        let p = fluctuation_prefactor(&op, hbar, 4000).unwrap();
        let identity = p.magnitude * p.magnitude * 2.0 * PI * hbar / mass * gy.abs();
        prop_assert!((identity - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn shooting_matches_closed_form_paths() {
    let pot = harmonic_potential(1.0, 1.0);
    let shot = classical_trajectory(&pot, 1.0, &[0.2], &[1.0], 0.0, 2.0, 2000, 1e-12).unwrap();
    let exact = harmonic_trajectory(1.0, 0.2, 1.0, 0.0, 2.0, 2000).unwrap();
    for i in (0..=2000).step_by(97) {
        assert!((shot.positions[i][0] - exact.positions[i][0]).abs() < 1e-9);
        assert!((shot.velocities[i][0] - exact.velocities[i][0]).abs() < 1e-9);
    }
    assert!((shot.positions[0][0] - 0.2).abs() < 1e-15);
    assert!((shot.positions[2000][0] - 1.0).abs() <= 1e-12);
    // Velocities agree with central differences of positions to O(h²).
    let h = 2.0 / 2000.0;
    for i in 1..2000 {
        let fd = (shot.positions[i + 1][0] - shot.positions[i - 1][0]) / (2.0 * h);
        assert!((fd - shot.velocities[i][0]).abs() <= h * h);
    }
    let s_shot = action(&shot, &pot, 1.0).unwrap();
    let s_exact = ((0.04 + 1.0) * 2f64.cos() - 2.0 * 0.2) / (2.0 * 2f64.sin());
    assert!((s_shot - s_exact).abs() < 1e-10);
}

#[test]
fn anharmonic_two_dimensional_path() {
    let v = parse("0.5*x^2 + 0.5*y^2 + 0.1*x^2*y^2").unwrap();
    let pot = Potential::new(v, &["x", "y"], BTreeMap::new());
    let traj = classical_trajectory(&pot, 1.0, &[0.0, 0.5], &[1.0, -0.2], 0.0, 1.0, 1000, 1e-11).unwrap();
    let end = traj.positions.last().unwrap();
    assert!((end[0] - 1.0).abs() <= 1e-11 && (end[1] + 0.2).abs() <= 1e-11);
    // Energy is conserved along the solution.
    let energy = |i: usize| {
        let (z, v) = (&traj.positions[i], &traj.velocities[i]);
        0.5 * (v[0] * v[0] + v[1] * v[1]) + pot.value(z).unwrap()
    };
    for i in [250, 500, 1000] {
        assert!((energy(i) - energy(0)).abs() < 1e-10);
    }
}

#[test]
fn discrete_determinant_converges_to_gelfand_yaglom() {
    let op = SlOperator1D::harmonic(1.0, 1.0, 0.0, 1.0, SignConvention::Euclidean).unwrap();
    let exact = gy_determinant(&op, 10_000, Storage::BoundaryOnly).unwrap().value;
    assert!((exact - 1f64.sinh()).abs() < 1e-12);
    let err = |n| (discrete_fluctuation_det(&op, n).unwrap() - exact).abs();
    let e4 = err(10_000);
    assert!(e4 <= 1e-3, "{e4}");
    let order = (err(1000) / err(2000)).log2();
    assert!(order >= 0.9, "order {order}");
}

#[test]
fn discrete_free_determinant_is_the_length() {
    for n in [2, 3, 17, 1000] {
        let op = SlOperator1D::free(1.3, 0.5, 2.75).unwrap();
        assert!((discrete_fluctuation_det(&op, n).unwrap() - 2.25).abs() < 1e-12);
    }
}
