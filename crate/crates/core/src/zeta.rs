//! Operator zeta functions and zeta-regularized determinants.
//!
//! Three routes are provided:
//!
//! * [`zeta_truncated`] sums `λ_n^{-τ}` over a computed spectrum and adds an
//!   asymptotic tail for the discarded eigenvalues.
//! * [`zeta_det`] evaluates `exp(-ζ'(0))`: the plain product for a finite
//!   spectrum, and the analytically continued free Dirichlet determinant
//!   (`2L/√m`) times a convergent correction product otherwise.
//! * [`zeta_fit`] recovers `ζ_J(k)` at positive integers from Gelfand-Yaglom
//!   ratios, using `log det(J+λ²)/det J = Σ (-1)^{k+1}/k · ζ_J(k) λ^{2k}`
//!   and a least-squares polynomial fit in `λ²`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::gy::{self, GyError, SlOperator1D};
use crate::ode::Storage;
use crate::semiclassical::simpson;
use crate::spectrum::{self, Spectrum, SpectrumError};

/// `ζ(0)` of the Riemann zeta function.
pub const RIEMANN_ZETA_AT_ZERO: f64 = -0.5;
/// `ζ'(0) = -½ ln 2π`.
pub const RIEMANN_ZETA_PRIME_AT_ZERO: f64 = -0.918_938_533_204_672_8;

/// Safety factor on the convergence radius `λ² < λ_min` of the fit series.
pub const RADIUS_SAFETY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZetaError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("eigenvalue {index} is not positive ({value})")]
    NonPositiveEigenvalue { index: usize, value: f64 },
    #[error("tau = {0} is in the divergence region of the 1D Weyl tail (need tau > 1/2)")]
    DivergentTail(f64),
    #[error("tail continuation is only implemented for the one-dimensional Weyl law")]
    UnsupportedTail,
    #[error("lambda grid reaches λ² = {lambda_sq_max}, beyond the convergence limit {limit} (λ_min = {lambda_min})")]
    ConvergenceRadius {
        lambda_sq_max: f64,
        limit: f64,
        lambda_min: f64,
    },
    #[error("least-squares system is rank deficient (condition {condition:e})")]
    RankDeficient { condition: f64 },
    #[error(transparent)]
    Gy(#[from] GyError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailForm {
    /// `λ_n ≈ m (nπ/L)² + offset` for a Dirichlet problem on an interval.
    Weyl1D,
    /// Weyl law in `dim` dimensions; kept for completeness of the model,
    /// no continuation is implemented for it.
    WeylMultiD { dim: usize },
}

/// Asymptotic model for the eigenvalues beyond `cutoff_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailModel {
    pub form: TailForm,
    pub cutoff_index: usize,
    pub length: f64,
    pub mass: f64,
    /// Constant second term of the asymptotics: the mean of the potential
    /// term over the interval.
    pub offset: f64,
}

impl TailModel {
    pub fn weyl_1d(length: f64, mass: f64, cutoff_index: usize) -> Result<Self, ZetaError> {
        if cutoff_index < 1 || !(length > 0.0) || !(mass > 0.0) {
            return Err(ZetaError::InvalidArgument(
                "tail needs cutoff_index >= 1 and positive length and mass".into(),
            ));
        }
        Ok(TailModel {
            form: TailForm::Weyl1D,
            cutoff_index,
            length,
            mass,
            offset: 0.0,
        })
    }

    /// Weyl tail for `op`, with the offset set to the interval mean of its
    /// potential term.
    pub fn for_operator(op: &SlOperator1D, cutoff_index: usize) -> Result<Self, ZetaError> {
        let mut tail = TailModel::weyl_1d(op.length(), op.mass(), cutoff_index)?;
        let (a, b) = op.interval();
        let n = 2048;
        let h = (b - a) / n as f64;
        let q: Vec<f64> = (0..=n).map(|i| op.potential_term(a + i as f64 * h)).collect();
        tail.offset = simpson(&q, h) / (b - a);
        Ok(tail)
    }

    /// `m (π/L)²`, the leading coefficient of the Weyl law.
    fn unit(&self) -> f64 {
        self.mass * (PI / self.length).powi(2)
    }

    /// Predicted `n`-th eigenvalue, 1-based.
    pub fn predicted(&self, n: usize) -> f64 {
        self.unit() * (n * n) as f64 + self.offset
    }
}

/// `Σ_{n > cutoff} n^{-s}` for `s > 1`, by direct summation up to 20 and
/// Euler-Maclaurin beyond. Returns `(value, error_estimate)`.
pub fn power_tail(s: f64, cutoff: usize) -> (f64, f64) {
    // B_2j / (2j)!
    const BERNOULLI_OVER_FACTORIAL: [f64; 5] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
    ];
    let start = (cutoff + 1).max(20);
    let mut direct = 0.0;
    for n in (cutoff + 1..start).rev() {
        direct += (n as f64).powf(-s);
    }
    let m = start as f64;
    let mut acc = m.powf(1.0 - s) / (s - 1.0) + 0.5 * m.powf(-s);
    // Rising factorial s(s+1)...(s+2j-2) times m^{-s-2j+1}.
    let mut rising = s;
    let mut power = m.powf(-s - 1.0);
    let mut last = 0.0;
    for (j, coef) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        if j > 0 {
            let k = (2 * j) as f64;
            rising *= (s + k - 1.0) * (s + k);
            power /= m * m;
        }
        last = coef * rising * power;
        acc += last;
    }
    (direct + acc, last.abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaValue {
    pub value: f64,
    pub error_estimate: f64,
}

/// `Σ_{n>N} (u n² + c)^{-τ}` by the binomial series in `c / (u n²)`.
fn weyl_tail_sum(tail: &TailModel, tau: f64) -> Result<(f64, f64), ZetaError> {
    let u = tail.unit();
    let n = tail.cutoff_index;
    let ratio = tail.offset.abs() / (u * ((n + 1) * (n + 1)) as f64);
    if ratio >= 0.5 {
        return Err(ZetaError::InvalidArgument(format!(
            "cutoff index {n} is too small for the tail offset {}",
            tail.offset
        )));
    }
    let mut total = 0.0;
    let mut err = 0.0;
    let mut binom = 1.0; // binomial(-τ, j)
    for j in 0..60 {
        if j > 0 {
            binom *= (-tau - (j as f64 - 1.0)) / j as f64;
        }
        let (h, e) = power_tail(2.0 * (tau + j as f64), n);
        let scale = binom * tail.offset.powi(j) * u.powf(-tau - j as f64);
        let term = scale * h;
        total += term;
        err += (scale * e).abs();
        if j > 0 && term.abs() <= 1e-18 * total.abs() {
            break;
        }
    }
    Ok((total, err))
}

/// Truncated operator zeta function, optionally completed with a Weyl
/// tail beyond `tail.cutoff_index`.
pub fn zeta_truncated(s: &Spectrum, tau: f64, tail: Option<&TailModel>) -> Result<ZetaValue, ZetaError> {
    if let Some((index, &value)) = s.eigenvalues.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(ZetaError::NonPositiveEigenvalue { index, value });
    }
    let Some(tail) = tail else {
        let value = s.eigenvalues.iter().rev().map(|l| l.powf(-tau)).sum();
        return Ok(ZetaValue {
            value,
            error_estimate: 0.0,
        });
    };
    if tail.form != TailForm::Weyl1D {
        return Err(ZetaError::UnsupportedTail);
    }
    if !(tau > 0.5) {
        return Err(ZetaError::DivergentTail(tau));
    }
    let n = tail.cutoff_index;
    if n > s.len() {
        return Err(ZetaError::InvalidArgument(format!(
            "tail cutoff {n} exceeds the {} computed eigenvalues",
            s.len()
        )));
    }
    let head: f64 = s.eigenvalues[..n].iter().rev().map(|l| l.powf(-tau)).sum();
    let (tail_value, tail_err) = weyl_tail_sum(tail, tau)?;
    // How far the last computed eigenvalue sits from the model.
    let predicted = tail.predicted(n);
    let deviation = (s.eigenvalues[n - 1] - predicted).abs() / predicted;
    Ok(ZetaValue {
        value: head + tail_value,
        error_estimate: tail_err + tau * deviation * tail_value.abs(),
    })
}

/// Zeta-regularized determinant of the free Dirichlet operator
/// `-m d²/dt²` on an interval of the given length, from the continuation
/// `ζ_J(τ) = (π√m/L)^{-2τ} ζ(2τ)`.
pub fn free_zeta_det(length: f64, mass: f64) -> f64 {
    let log_unit = (PI * mass.sqrt() / length).ln();
    let zeta_prime = -2.0 * log_unit * RIEMANN_ZETA_AT_ZERO + 2.0 * RIEMANN_ZETA_PRIME_AT_ZERO;
    (-zeta_prime).exp()
}

/// `exp(-ζ'_J(0))`.
///
/// Without a tail the spectrum is taken as complete and the result is the
/// product of its eigenvalues. With a 1D Weyl tail the result is the free
/// determinant times `Π λ_n / (m(nπ/L)²)` over the computed eigenvalues and
/// the tail factor `Π_{n>N} (1 + offset / (m(nπ/L)²))`.
pub fn zeta_det(s: &Spectrum, tail: Option<&TailModel>) -> Result<f64, ZetaError> {
    let Some(tail) = tail else {
        return Ok(s.eigenvalues.iter().product());
    };
    if tail.form != TailForm::Weyl1D {
        return Err(ZetaError::UnsupportedTail);
    }
    let n = tail.cutoff_index;
    if n > s.len() {
        return Err(ZetaError::InvalidArgument(format!(
            "tail cutoff {n} exceeds the {} computed eigenvalues",
            s.len()
        )));
    }
    let u = tail.unit();
    let mut log_ratio = 0.0;
    let mut sign = 1.0;
    for (i, &l) in s.eigenvalues[..n].iter().enumerate() {
        let w = u * ((i + 1) * (i + 1)) as f64;
        let r = l / w;
        if r < 0.0 {
            sign = -sign;
        }
        log_ratio += r.abs().ln();
    }
    // Σ_{n>N} ln(1 + c/(u n²)) = Σ_j (-1)^{j+1} (c/u)^j / j · Σ_{n>N} n^{-2j}
    let x = tail.offset / u;
    let mut log_tail = 0.0;
    if x != 0.0 {
        if x.abs() >= 0.5 * ((n + 1) * (n + 1)) as f64 {
            return Err(ZetaError::InvalidArgument(format!(
                "cutoff index {n} is too small for the tail offset {}",
                tail.offset
            )));
        }
        for j in 1..60 {
            let (h, _) = power_tail(2.0 * j as f64, n);
            let term = if j % 2 == 1 { 1.0 } else { -1.0 } * x.powi(j) / j as f64 * h;
            log_tail += term;
            if term.abs() <= 1e-18 * log_tail.abs() {
                break;
            }
        }
    }
    Ok(sign * free_zeta_det(tail.length, tail.mass) * (log_ratio + log_tail).exp())
}

/// `N` uniformly spaced points strictly inside `(a, b)`.
pub fn uniform_open_grid(n: usize, a: f64, b: f64) -> Vec<f64> {
    (1..=n).map(|i| a + (b - a) * i as f64 / (n + 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZetaFitResult {
    pub lambda_grid: Vec<f64>,
    pub log_ratios: Vec<f64>,
    pub degree: usize,
    /// `c_k` multiplying `λ^{2k}`, `k = 1..=degree`.
    pub coefficients: Vec<f64>,
    /// `ζ_J(k) = (-1)^{k+1} k c_k`.
    pub zeta_values: BTreeMap<usize, f64>,
    /// Condition number of the column-scaled design matrix.
    pub condition_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    pub lowest_eigenvalue: f64,
    pub radius_limit: f64,
    pub gy_determinant: f64,
    pub steps: usize,
}

/// Least-squares fit of `y ≈ Σ_{k=1..degree} c_k x^k` (no constant term)
/// with column scaling. Returns the coefficients and the condition number
/// of the scaled design matrix.
pub fn fit_polynomial_no_constant(x: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64), ZetaError> {
    let rows = x.len();
    if degree == 0 || rows < degree || y.len() != rows {
        return Err(ZetaError::InvalidArgument(format!(
            "need degree >= 1 and at least degree points, got degree {degree} with {rows} points"
        )));
    }
    let mut a = DMatrix::from_fn(rows, degree, |i, k| x[i].powi(k as i32 + 1));
    let mut col_norms = Vec::with_capacity(degree);
    for k in 0..degree {
        let nrm = a.column(k).norm();
        if nrm == 0.0 {
            return Err(ZetaError::RankDeficient {
                condition: f64::INFINITY,
            });
        }
        a.column_mut(k).scale_mut(1.0 / nrm);
        col_norms.push(nrm);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition = smax / smin;
    if !(smin > 1e-13 * smax) {
        return Err(ZetaError::RankDeficient { condition });
    }
    let rhs = DVector::from_column_slice(y);
    let scaled = svd
        .solve(&rhs, 0.0)
        .map_err(|_| ZetaError::RankDeficient { condition })?;
    let coefficients = scaled.iter().zip(&col_norms).map(|(c, n)| c / n).collect();
    Ok((coefficients, condition))
}

/// Extract `ζ_J(1..=degree)` from Gelfand-Yaglom ratios on `lambda_grid`.
pub fn zeta_fit(op: &SlOperator1D, lambda_grid: &[f64], degree: usize, steps: usize) -> Result<ZetaFitResult, ZetaError> {
    zeta_fit_detailed(op, lambda_grid, degree, steps).map(|(r, _)| r)
}

pub fn zeta_fit_detailed(
    op: &SlOperator1D,
    lambda_grid: &[f64],
    degree: usize,
    steps: usize,
) -> Result<(ZetaFitResult, FitDiagnostics), ZetaError> {
    if degree == 0 {
        return Err(ZetaError::InvalidArgument("degree must be at least 1".into()));
    }
    if lambda_grid.len() < degree + 1 {
        return Err(ZetaError::InvalidArgument(format!(
            "{} grid points cannot determine a degree-{degree} fit (need {})",
            lambda_grid.len(),
            degree + 1
        )));
    }
    if lambda_grid[0] <= 0.0 || lambda_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ZetaError::InvalidArgument(
            "lambda grid must be strictly positive and strictly increasing".into(),
        ));
    }

    let lowest = spectrum::eigenvalues_shooting(op, 1, 1e-8)?.eigenvalues[0];
    let limit = RADIUS_SAFETY * lowest;
    let top = lambda_grid.last().unwrap().powi(2);
    if !(lowest > 0.0) || top >= limit {
        return Err(ZetaError::ConvergenceRadius {
            lambda_sq_max: top,
            limit,
            lambda_min: lowest,
        });
    }

    let base = gy::gy_determinant(op, steps, Storage::BoundaryOnly)?.value;
    let threshold = op.zero_mode_threshold();
    if base.abs() < threshold {
        return Err(GyError::ZeroMode {
            value: base.abs(),
            threshold,
        }
        .into());
    }
    let mut log_ratios = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let shifted = op.clone().with_shift(op.shift() + lambda * lambda)?;
        let top = gy::gy_determinant(&shifted, steps, Storage::BoundaryOnly)?.value;
        log_ratios.push((top / base).ln());
    }

    let x: Vec<f64> = lambda_grid.iter().map(|l| l * l).collect();
    let (coefficients, condition_estimate) = fit_polynomial_no_constant(&x, &log_ratios, degree)?;
    let zeta_values = coefficients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = i + 1;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            (k, sign * k as f64 * c)
        })
        .collect();
    Ok((
        ZetaFitResult {
            lambda_grid: lambda_grid.to_vec(),
            log_ratios,
            degree,
            coefficients,
            zeta_values,
            condition_estimate,
        },
        FitDiagnostics {
            lowest_eigenvalue: lowest,
            radius_limit: limit,
            gy_determinant: base,
            steps,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gy::SignConvention;

    #[test]
    fn finite_spectrum_sum_and_product() {
        let s = Spectrum::from_values(vec![1.0, 4.0, 9.0], "finite");
        let z = zeta_truncated(&s, 1.0, None).unwrap();
        assert!((z.value - (1.0 + 0.25 + 1.0 / 9.0)).abs() < 1e-15);
        assert_eq!(zeta_det(&s, None).unwrap(), 36.0);
    }

    #[test]
    fn power_tail_against_direct_sum() {
        // Σ_{n>5} n^-3 summed directly to 10^6 plus the integral remainder.
        let mut direct = 0.0;
        for n in (6..=1_000_000u64).rev() {
            direct += (n as f64).powi(-3);
        }
        direct += 0.5 / 1e12;
        let (v, e) = power_tail(3.0, 5);
        assert!((v - direct).abs() < 1e-15, "{v} vs {direct}");
        assert!(e < 1e-15);
    }

    #[test]
    fn errors_for_bad_inputs() {
        let s = Spectrum::from_values(vec![-1.0, 4.0], "indefinite");
        assert!(matches!(
            zeta_truncated(&s, 1.0, None),
            Err(ZetaError::NonPositiveEigenvalue { index: 0, .. })
        ));
        let s = Spectrum::from_values(vec![1.0, 4.0], "free");
        let tail = TailModel::weyl_1d(PI, 1.0, 2).unwrap();
        assert_eq!(zeta_truncated(&s, 0.5, Some(&tail)), Err(ZetaError::DivergentTail(0.5)));
        let multi = TailModel {
            form: TailForm::WeylMultiD { dim: 2 },
            ..tail
        };
        assert_eq!(zeta_det(&s, Some(&multi)), Err(ZetaError::UnsupportedTail));
        let long = TailModel::weyl_1d(PI, 1.0, 3).unwrap();
        assert!(zeta_det(&s, Some(&long)).is_err());
        assert!(TailModel::weyl_1d(PI, 1.0, 0).is_err());
    }

    #[test]
    fn free_determinant_continuation() {
        assert!((free_zeta_det(PI, 1.0) - 2.0 * PI).abs() < 1e-12);
        assert!((free_zeta_det(1.0, 1.0) - 2.0).abs() < 1e-12);
        assert!((free_zeta_det(2.0, 4.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_an_exact_polynomial() {
        let x: Vec<f64> = (1..=12).map(|i| i as f64 * 0.05).collect();
        let y: Vec<f64> = x.iter().map(|x| 1.5 * x - 0.25 * x * x + 0.125 * x.powi(3)).collect();
        let (c, cond) = fit_polynomial_no_constant(&x, &y, 3).unwrap();
        assert!((c[0] - 1.5).abs() < 1e-10 && (c[1] + 0.25).abs() < 1e-9 && (c[2] - 0.125).abs() < 1e-8);
        assert!(cond.is_finite() && cond >= 1.0);
        let dup = vec![0.5; 5];
        assert!(matches!(
            fit_polynomial_no_constant(&dup, &dup, 2),
            Err(ZetaError::RankDeficient { .. })
        ));
    }

    #[test]
    fn fit_guards_the_convergence_radius() {
        let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
        let grid = uniform_open_grid(10, 0.0, 1.2);
        assert!(matches!(
            zeta_fit(&op, &grid, 4, 10_000),
            Err(ZetaError::ConvergenceRadius { .. })
        ));
        assert!(zeta_fit(&op, &[0.1, 0.2], 4, 10_000).is_err());
        assert!(zeta_fit(&op, &[0.3, 0.2, 0.1, 0.05, 0.01], 4, 10_000).is_err());
    }

    #[test]
    fn tail_offset_is_the_mean_potential() {
        let op = SlOperator1D::harmonic(1.0, 2.0, 0.0, PI, SignConvention::Euclidean).unwrap();
        let tail = TailModel::for_operator(&op, 10).unwrap();
        assert!((tail.offset - 4.0).abs() < 1e-12);
    }
}
