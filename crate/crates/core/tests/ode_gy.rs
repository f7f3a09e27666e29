use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use fundet::expr::parse;
use fundet::gy::{
    gy_determinant, gy_ratio, morse_index, project_along_trajectory, Coefficient, Direction, GyError,
    HessianFn, SignConvention, SlOperator1D,
};
use fundet::ode::{integrate_rk4, integrate_rk4_endpoint, Storage};
use fundet::semiclassical::{harmonic_trajectory, Potential, Trajectory};
use fundet::spectrum::eigenvalues_shooting;
use proptest::prelude::*;

fn smooth_f(t: f64) -> f64 {
    -(1.0 + 0.5 * t.sin())
}

#[test]
fn richardson_order_is_four() {
    let y = |n| integrate_rk4_endpoint(smooth_f, 0.0, 2.0, 0.0, 1.0, n).unwrap().0;
    let (y1, y2, y4) = (y(20), y(40), y(80));
    let order = ((y1 - y2) / (y2 - y4)).log2();
    assert!((3.8..=4.2).contains(&order), "order {order}");
}

proptest! {
    #[test]
    fn solutions_are_linear_in_initial_data(
        alpha in -3.0f64..3.0, beta in -3.0f64..3.0,
        u0 in -2.0f64..2.0, up0 in -2.0f64..2.0, v0 in -2.0f64..2.0, vp0 in -2.0f64..2.0,
    ) {
        let steps = 200;
        let u = integrate_rk4(smooth_f, 0.0, 3.0, u0, up0, steps).unwrap();
        let v = integrate_rk4(smooth_f, 0.0, 3.0, v0, vp0, steps).unwrap();
        let w = integrate_rk4(smooth_f, 0.0, 3.0, alpha * u0 + beta * v0, alpha * up0 + beta * vp0, steps).unwrap();
        let scale = w.y.iter().chain(&w.yprime).fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..w.len() {
            prop_assert!((w.y[i] - (alpha * u.y[i] + beta * v.y[i])).abs() <= 1e-10 * scale);
            prop_assert!((w.yprime[i] - (alpha * u.yprime[i] + beta * v.yprime[i])).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn ratio_increases_with_lambda(omega in 0.0f64..3.0, l1 in 0.0f64..2.0, dl in 0.01f64..2.0) {
        let w = move |t: f64| omega * omega * (1.0 + 0.5 * t.sin());
        let op = SlOperator1D::new(1.0, Coefficient::func(w), 0.0, 2.0, SignConvention::Euclidean).unwrap();
        let r1 = gy_ratio(&op, l1, 2000).unwrap();
        let r2 = gy_ratio(&op, l1 + dl, 2000).unwrap();
        prop_assert!(r2 > r1);
    }

    #[test]
    fn euclidean_nonnegative_coefficients_have_no_negative_modes(omega in 0.0f64..5.0, len in 0.1f64..6.0) {
        let op = SlOperator1D::harmonic(1.0, omega, 0.0, len, SignConvention::Euclidean).unwrap();
        let r = gy_determinant(&op, 2000, Storage::Full).unwrap();
        prop_assert_eq!(morse_index(&r).unwrap(), 0);
    }
}

#[test]
fn gy_converges_at_fourth_order() {
    let op = SlOperator1D::harmonic(1.0, 2.0, 0.0, 3.0, SignConvention::RealTime).unwrap();
    let v = |n| gy_determinant(&op, n, Storage::BoundaryOnly).unwrap().value;
    let exact = (2.0f64 * 3.0).sin() / 2.0;
    for n in [100, 200, 400] {
        let h = 3.0 / n as f64;
        assert!((v(n) - v(2 * n)).abs() <= 0.5 * h.powi(4), "n = {n}");
    }
    assert!((v(4000) - exact).abs() < 1e-12);
}

#[test]
fn shooting_eigenvalues_are_zeros_of_the_boundary_value() {
    let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
    let spec = eigenvalues_shooting(&op, 4, 1e-12).unwrap();
    let shifted = |lambda: f64| {
        let op = SlOperator1D::new(1.0, Coefficient::Constant(-lambda), 0.0, PI, SignConvention::Euclidean).unwrap();
        gy_determinant(&op, 20_000, Storage::BoundaryOnly).unwrap().value
    };
    for &l in &spec.eigenvalues {
        assert!(shifted(l).abs() < 1e-9, "{l}");
    }
    for l in [2.5, 6.0, 12.0] {
        assert!(shifted(l).abs() > 1e-2);
    }
}

#[test]
fn ratio_against_product_formula() {
    let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
    let mut product = 1.0;
    for n in 1..=1_000_000u64 {
        product *= 1.0 + 1.0 / (n * n) as f64;
    }
    // Remaining factors contribute exp(Σ_{n>10⁶} 1/n²) ≈ exp(10⁻⁶).
    product *= (1e-6f64).exp();
    let r = gy_ratio(&op, 1.0, 100_000).unwrap();
    assert!((r - product).abs() < 1e-9, "{r} vs {product}");
    assert!((r - 3.67608).abs() < 1e-5);
}

#[test]
fn zero_mode_is_reported() {
    let op = SlOperator1D::harmonic(1.0, 1.0, 0.0, PI, SignConvention::RealTime).unwrap();
    assert!(matches!(gy_ratio(&op, 0.5, 10_000), Err(GyError::ZeroMode { .. })));
}

fn straight_line(d: usize, from: &[f64], to: &[f64], n: usize) -> Trajectory {
    let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let vel: Vec<f64> = (0..d).map(|k| to[k] - from[k]).collect();
    Trajectory {
        positions: times.iter().map(|t| (0..d).map(|k| from[k] + t * vel[k]).collect()).collect(),
        velocities: vec![vel; n + 1],
        times,
        start: from.to_vec(),
        end: to.to_vec(),
    }
}

#[test]
fn isotropic_projection_is_constant() {
    let omega = 1.7;
    let hess = Arc::new(HessianFn {
        dim: 2,
        f: move |_: &[f64]| vec![omega * omega, 0.0, 0.0, omega * omega],
    });
    let traj = Arc::new(straight_line(2, &[0.0, 1.0], &[2.0, -1.0], 50));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for dir in [Direction::Tangent, Direction::Fixed(vec![s, s]), Direction::Fixed(vec![0.0, 1.0])] {
        let op = project_along_trajectory(hess.clone(), traj.clone(), dir, 1.0, SignConvention::RealTime).unwrap();
        assert!(op.is_exploratory());
        for t in [0.0, 0.13, 0.5, 0.99, 1.0] {
            assert!((op.coefficient().eval(t) - omega * omega).abs() < 1e-12);
        }
    }
}

#[test]
fn diagonal_projection_picks_the_entry() {
    let hess = Arc::new(HessianFn {
        dim: 2,
        f: |_: &[f64]| vec![4.0, 0.0, 0.0, 9.0],
    });
    let traj = Arc::new(harmonic_2d_path());
    let op = project_along_trajectory(hess, traj, Direction::Fixed(vec![1.0, 0.0]), 1.0, SignConvention::RealTime)
        .unwrap();
    for t in [0.0, 0.3, 0.7, 1.0] {
        assert_eq!(op.coefficient().eval(t), 4.0);
    }
}

fn harmonic_2d_path() -> Trajectory {
    let a = harmonic_trajectory(1.0, 0.0, 1.0, 0.0, 1.0, 40).unwrap();
    let b = harmonic_trajectory(2.0, 1.0, 0.5, 0.0, 1.0, 40).unwrap();
    Trajectory {
        times: a.times.clone(),
        positions: a.positions.iter().zip(&b.positions).map(|(p, q)| vec![p[0], q[0]]).collect(),
        velocities: a.velocities.iter().zip(&b.velocities).map(|(p, q)| vec![p[0], q[0]]).collect(),
        start: vec![0.0, 1.0],
        end: vec![1.0, 0.5],
    }
}

#[test]
fn quartic_projection_matches_the_hessian_entry() {
    let mut params = BTreeMap::new();
    params.insert("g".to_string(), 0.3);
    let v = parse("0.5*x^2 + 0.5*y^2 + g*x^2*y^2 + 0.25*x^4").unwrap();
    let pot = Arc::new(Potential::new(v, &["x", "y"], params));
    let (from, to) = ([-1.0, 0.5], [1.5, 2.0]);
    let traj = Arc::new(straight_line(2, &from, &to, 64));
    let op = project_along_trajectory(pot, traj, Direction::Fixed(vec![1.0, 0.0]), 1.0, SignConvention::RealTime)
        .unwrap();
    // ∂²V/∂x² = 1 + 2 g y² + 3 x², evaluated by hand on the line.
    for t in [0.0, 0.21, 0.5, 0.77, 1.0] {
        let x = from[0] + t * (to[0] - from[0]);
        let y = from[1] + t * (to[1] - from[1]);
        let expected = 1.0 + 2.0 * 0.3 * y * y + 3.0 * x * x;
        assert!((op.coefficient().eval(t) - expected).abs() < 1e-10, "t = {t}");
    }
}

#[test]
fn projection_rejects_bad_directions() {
    let hess = Arc::new(HessianFn {
        dim: 2,
        f: |_: &[f64]| vec![1.0, 0.0, 0.0, 1.0],
    });
    let traj = Arc::new(straight_line(2, &[0.0, 0.0], &[1.0, 1.0], 10));
    let err = project_along_trajectory(hess.clone(), traj.clone(), Direction::Fixed(vec![1.0, 0.0, 0.0]), 1.0, SignConvention::RealTime);
    assert!(matches!(err, Err(GyError::DimensionMismatch { expected: 2, got: 3 })));
    let err = project_along_trajectory(hess.clone(), traj, Direction::Fixed(vec![1.0, 1.0]), 1.0, SignConvention::RealTime);
    assert!(matches!(err, Err(GyError::NotUnitDirection(_))));
    let still = Arc::new(straight_line(2, &[0.0, 0.0], &[0.0, 0.0], 10));
    let err = project_along_trajectory(hess, still, Direction::Tangent, 1.0, SignConvention::RealTime);
    assert!(matches!(err, Err(GyError::DegenerateTangent(_))));
}
