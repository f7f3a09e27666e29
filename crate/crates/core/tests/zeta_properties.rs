use std::f64::consts::PI;

use fundet::gy::{gy_determinant, gy_ratio, SignConvention, SlOperator1D};
use fundet::ode::Storage;
use fundet::spectrum::{eigenvalues_shooting, Spectrum};
use fundet::zeta::{uniform_open_grid, zeta_det, zeta_fit, zeta_truncated, TailModel};
use proptest::prelude::*;

/// Σ_{n ≤ 10⁸} n^{-s}, summed smallest-first, plus the integral remainder.
fn brute_force_zeta(s: i32) -> f64 {
    let limit = 100_000_000u64;
    let mut acc = 0.0;
    for n in (1..=limit).rev() {
        acc += (n as f64).powi(-s);
    }
    acc + (limit as f64).powi(1 - s) / (s - 1) as f64 - 0.5 * (limit as f64).powi(-s)
}

fn free_pi() -> SlOperator1D {
    SlOperator1D::free(1.0, 0.0, PI).unwrap()
}

#[test]
fn truncated_sum_with_weyl_tail() {
    let spec = eigenvalues_shooting(&free_pi(), 100, 1e-11).unwrap();
    let tail = TailModel::for_operator(&free_pi(), 100).unwrap();
    let z1 = zeta_truncated(&spec, 1.0, Some(&tail)).unwrap();
    let oracle1 = brute_force_zeta(2);
    assert!((z1.value - oracle1).abs() <= 1e-6, "{} vs {oracle1}", z1.value);
    assert!(z1.error_estimate < 1e-6);
    let z2 = zeta_truncated(&spec, 2.0, Some(&tail)).unwrap();
    let oracle2 = brute_force_zeta(4);
    assert!((z2.value - oracle2).abs() <= 1e-8, "{} vs {oracle2}", z2.value);
}

#[test]
fn free_determinant_by_continuation() {
    for len in [1.0, PI] {
        let op = SlOperator1D::free(1.0, 0.0, len).unwrap();
        let spec = eigenvalues_shooting(&op, 20, 1e-10).unwrap();
        let tail = TailModel::for_operator(&op, 20).unwrap();
        let det = zeta_det(&spec, Some(&tail)).unwrap();
        assert!((det - 2.0 * len).abs() <= 1e-6, "L = {len}: {det}");
    }
}

#[test]
fn ratio_consistency_on_the_harmonic_family() {
    for (omega, len) in [(0.5, PI), (1.0, 1.0), (2.0, PI), (3.0, 2.0)] {
        let op = SlOperator1D::harmonic(1.0, omega, 0.0, len, SignConvention::Euclidean).unwrap();
        let free = SlOperator1D::free(1.0, 0.0, len).unwrap();
        let n = 60;
        let zeta_ratio = zeta_det(&eigenvalues_shooting(&op, n, 1e-11).unwrap(), Some(&TailModel::for_operator(&op, n).unwrap()))
            .unwrap()
            / zeta_det(&eigenvalues_shooting(&free, n, 1e-11).unwrap(), Some(&TailModel::for_operator(&free, n).unwrap()))
                .unwrap();
        let gy = gy_determinant(&op, 100_000, Storage::BoundaryOnly).unwrap().value
            / gy_determinant(&free, 100_000, Storage::BoundaryOnly).unwrap().value;
        assert!((zeta_ratio / gy - 1.0).abs() <= 1e-6, "ω = {omega}: {zeta_ratio} vs {gy}");
    }
}

#[test]
fn gy_log_ratio_matches_sinh_closed_form() {
    let op = free_pi();
    for lambda in uniform_open_grid(20, 0.0, 3.0) {
        let closed = ((lambda * PI).sinh() / (lambda * PI)).ln();
        let got = gy_ratio(&op, lambda, 100_000).unwrap().ln();
        assert!((got - closed).abs() <= 1e-8, "λ = {lambda}");
    }
}

#[test]
fn fit_reproduces_riemann_values() {
    let op = free_pi();
    let coarse = zeta_fit(&op, &uniform_open_grid(10, 0.0, 0.9), 4, 20_000).unwrap();
    assert!((1.55..=1.70).contains(&coarse.zeta_values[&1]), "{:?}", coarse.zeta_values);
    assert!((1.05..=1.15).contains(&coarse.zeta_values[&2]), "{:?}", coarse.zeta_values);
    let fine = zeta_fit(&op, &uniform_open_grid(40, 0.0, 0.5), 6, 20_000).unwrap();
    assert!((fine.zeta_values[&1] - PI.powi(2) / 6.0).abs() <= 1e-3);
    assert!((fine.zeta_values[&2] - PI.powi(4) / 90.0).abs() <= 1e-3);
    assert_eq!(fine.zeta_values.len(), 6);
    assert!(fine.zeta_values.values().all(|v| v.is_finite()));
    assert!(fine.condition_estimate >= 1.0);
}

#[test]
fn fit_is_stable_under_grid_refinement() {
    let op = free_pi();
    let a = zeta_fit(&op, &uniform_open_grid(20, 0.0, 0.6), 6, 20_000).unwrap();
    let b = zeta_fit(&op, &uniform_open_grid(41, 0.0, 0.6), 6, 20_000).unwrap();
    for k in 1..=2 {
        assert!((a.zeta_values[&k] - b.zeta_values[&k]).abs() <= 1e-4, "k = {k}");
    }
}

#[test]
fn harmonic_fit_matches_direct_sum() {
    let omega: f64 = 1.5;
    let op = SlOperator1D::harmonic(1.0, omega, 0.0, PI, SignConvention::Euclidean).unwrap();
    let mut direct = 0.0;
    for n in (1..=1_000_000u64).rev() {
        direct += 1.0 / ((n * n) as f64 + omega * omega);
    }
    direct += 1.0 / 1e6;
    let fit = zeta_fit(&op, &uniform_open_grid(40, 0.0, 1.0), 6, 20_000).unwrap();
    assert!((fit.zeta_values[&1] - direct).abs() <= 1e-5, "{} vs {direct}", fit.zeta_values[&1]);
    // Independent closed form (π ω coth(π ω) - 1) / (2 ω²).
    let closed = (PI * omega / (PI * omega).tanh() - 1.0) / (2.0 * omega * omega);
    assert!((direct - closed).abs() < 1e-11);
}

proptest! {
    #[test]
    fn finite_determinant_is_the_product(values in prop::collection::vec(0.01f64..100.0, 1..12)) {
        let product: f64 = values.iter().product();
        let det = zeta_det(&Spectrum::from_values(values.clone(), "finite"), None).unwrap();
        prop_assert!((det - product).abs() <= 4.0 * f64::EPSILON * product.abs() * values.len() as f64);
    }
}

#[test]
fn finite_spectrum_example_is_exact() {
    let s = Spectrum::from_values(vec![1.0, 4.0, 9.0], "finite");
    assert!((zeta_det(&s, None).unwrap() - 36.0).abs() <= 36.0 * 1e-14);
    let z = zeta_truncated(&s, 1.0, None).unwrap();
    assert!((z.value - 49.0 / 36.0).abs() < 1e-15);
}
