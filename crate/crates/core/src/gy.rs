//! Gelfand-Yaglom determinants of one-dimensional Sturm-Liouville operators.
//!
//! For `J = -m d²/dt² + q(t)` with Dirichlet conditions on `[a, b]`, the
//! determinant is the endpoint value `y(b)` of the initial-value problem
//! `J y = 0`, `y(a) = 0`, `y'(a) = 1`. Here `q = -w` in the real-time
//! convention (`J = -m d² - V''`) and `q = +w` in the Euclidean one, plus an
//! optional constant shift `λ²`.
//!
//! The raw value `y(b)` differs from the zeta-regularized determinant by a
//! convention-dependent constant (a factor 2 for Dirichlet problems), so
//! comparisons across methods are made on ratios.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::expr::{Expr, ExprError, With};
use crate::ode::{self, IvpSolution, OdeError, Storage};
use crate::semiclassical::Trajectory;

/// Relative zero-mode threshold: `|det J| < factor * (b - a)` is treated
/// as a vanishing determinant.
pub const DEFAULT_ZERO_MODE_FACTOR: f64 = 1e-10;

/// Smallest step count accepted by [`gy_determinant`].
pub const MIN_STEPS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GyError {
    #[error("invalid operator: {0}")]
    InvalidOperator(String),
    #[error("at least {MIN_STEPS} steps are required (got {0})")]
    TooFewSteps(usize),
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("zero mode: |det J| = {value:e} is below the threshold {threshold:e}")]
    ZeroMode { value: f64, threshold: f64 },
    #[error("result carries no stored solution")]
    MissingSolution,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("projection direction is not a unit vector (norm {0})")]
    NotUnitDirection(f64),
    #[error("trajectory tangent vanishes at t = {0}")]
    DegenerateTangent(f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// Which sign the coefficient enters the operator with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConvention {
    /// `J y = -m y'' - w y`
    #[default]
    RealTime,
    /// `J y = -m y'' + w y`
    Euclidean,
}

impl SignConvention {
    pub fn apply(self, w: f64) -> f64 {
        match self {
            SignConvention::RealTime => -w,
            SignConvention::Euclidean => w,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignConvention::RealTime => "real_time",
            SignConvention::Euclidean => "euclidean",
        }
    }
}

/// The coefficient function `w(t)`.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    Expr {
        expr: Arc<Expr>,
        var: String,
        bindings: Arc<BTreeMap<String, f64>>,
    },
    Func(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Coefficient {
    pub fn expr(expr: Expr, var: &str, bindings: BTreeMap<String, f64>) -> Self {
        Coefficient::Expr {
            expr: Arc::new(expr),
            var: var.to_string(),
            bindings: Arc::new(bindings),
        }
    }

    pub fn func(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Coefficient::Func(Arc::new(f))
    }

    pub fn try_eval(&self, t: f64) -> Result<f64, ExprError> {
        match self {
            Coefficient::Constant(c) => Ok(*c),
            Coefficient::Expr {
                expr,
                var,
                bindings,
            } => expr.evaluate(&With {
                name: var,
                value: t,
                rest: bindings.as_ref(),
            }),
            Coefficient::Func(f) => Ok(f(t)),
        }
    }

    /// Evaluation failures become NaN, which the integrator reports with
    /// the offending `t`.
    pub fn eval(&self, t: f64) -> f64 {
        self.try_eval(t).unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Coefficient::Constant(c) if *c == 0.0)
    }
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(c) => write!(f, "Constant({c})"),
            Coefficient::Expr { expr, var, .. } => write!(f, "Expr({expr} in {var})"),
            Coefficient::Func(_) => f.write_str("Func(..)"),
        }
    }
}

/// `J = -m d²/dt² + sign(w) + shift` on `[a, b]`, Dirichlet at both ends.
#[derive(Debug, Clone)]
pub struct SlOperator1D {
    mass: f64,
    coeff: Coefficient,
    a: f64,
    b: f64,
    sign: SignConvention,
    shift: f64,
    exploratory: bool,
}

impl SlOperator1D {
    pub fn new(
        mass: f64,
        coeff: Coefficient,
        a: f64,
        b: f64,
        sign: SignConvention,
    ) -> Result<Self, GyError> {
        if !(mass.is_finite() && mass > 0.0) {
            return Err(GyError::InvalidOperator(format!("mass must be positive, got {mass}")));
        }
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(GyError::InvalidOperator(format!("interval [{a}, {b}] is empty")));
        }
        const PROBES: usize = 32;
        for i in 0..=PROBES {
            let t = a + (b - a) * i as f64 / PROBES as f64;
            let w = coeff.try_eval(t)?;
            if !w.is_finite() {
                return Err(GyError::InvalidOperator(format!("coefficient not finite at t = {t}")));
            }
        }
        Ok(SlOperator1D {
            mass,
            coeff,
            a,
            b,
            sign,
            shift: 0.0,
            exploratory: false,
        })
    }

    /// `-m d²/dt²` on `[a, b]`.
    pub fn free(mass: f64, a: f64, b: f64) -> Result<Self, GyError> {
        SlOperator1D::new(mass, Coefficient::Constant(0.0), a, b, SignConvention::RealTime)
    }

    /// Constant coefficient `w ≡ omega²·mass`, i.e. the harmonic oscillator.
    pub fn harmonic(mass: f64, omega: f64, a: f64, b: f64, sign: SignConvention) -> Result<Self, GyError> {
        SlOperator1D::new(mass, Coefficient::Constant(mass * omega * omega), a, b, sign)
    }

    /// Add `shift` (λ²) to the operator. Must be nonnegative.
    pub fn with_shift(mut self, shift: f64) -> Result<Self, GyError> {
        if !(shift.is_finite() && shift >= 0.0) {
            return Err(GyError::InvalidOperator(format!("shift must be nonnegative, got {shift}")));
        }
        self.shift = shift;
        Ok(self)
    }

    pub(crate) fn mark_exploratory(mut self) -> Self {
        self.exploratory = true;
        self
    }

    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn coefficient(&self) -> &Coefficient {
        &self.coeff
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn length(&self) -> f64 {
        self.b - self.a
    }

    pub fn sign(&self) -> SignConvention {
        self.sign
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Set when the operator came from a trajectory projection, whose link
    /// to the full multi-dimensional determinant is not established.
    pub fn is_exploratory(&self) -> bool {
        self.exploratory
    }

    /// The multiplicative term `q(t)` in `J = -m d² + q`.
    pub fn potential_term(&self, t: f64) -> f64 {
        self.sign.apply(self.coeff.eval(t)) + self.shift
    }

    pub fn zero_mode_threshold(&self) -> f64 {
        DEFAULT_ZERO_MODE_FACTOR * self.length()
    }

    /// Solve `(J - mu) y = 0` from the left endpoint.
    pub(crate) fn shoot(&self, mu: f64, steps: usize, storage: Storage) -> Result<GyResult, GyError> {
        if steps < MIN_STEPS {
            return Err(GyError::TooFewSteps(steps));
        }
        let inv_m = 1.0 / self.mass;
        let rhs = |t: f64| (self.potential_term(t) - mu) * inv_m;
        let mut crossings = SignChanges::default();
        let mut solution = match storage {
            Storage::Full => Some(IvpSolution {
                grid: Vec::with_capacity(steps + 1),
                y: Vec::with_capacity(steps + 1),
                yprime: Vec::with_capacity(steps + 1),
                step: self.length() / steps as f64,
            }),
            Storage::BoundaryOnly => None,
        };
        let (value, derivative) = ode::rk4_walk(rhs, self.a, self.b, 0.0, 1.0, steps, |i, t, y, yp| {
            if i > 0 {
                crossings.push(y);
            }
            if let Some(s) = solution.as_mut() {
                s.grid.push(t);
                s.y.push(y);
                s.yprime.push(yp);
            }
        })?;
        Ok(GyResult {
            value,
            derivative,
            zero_crossings: crossings.count,
            solution,
        })
    }
}

#[derive(Default)]
struct SignChanges {
    last: f64,
    count: usize,
}

impl SignChanges {
    fn push(&mut self, y: f64) {
        if y == 0.0 {
            return;
        }
        if self.last != 0.0 && (y > 0.0) != (self.last > 0.0) {
            self.count += 1;
        }
        self.last = y;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GyResult {
    /// `y(b)`, the Gelfand-Yaglom determinant.
    pub value: f64,
    /// `y'(b)`.
    pub derivative: f64,
    /// Strict sign changes of the sampled solution on `(a, b]`.
    pub zero_crossings: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<IvpSolution>,
}

/// Gelfand-Yaglom determinant `y(b)` of `op`.
pub fn gy_determinant(op: &SlOperator1D, steps: usize, storage: Storage) -> Result<GyResult, GyError> {
    op.shoot(0.0, steps, storage)
}

/// `det(J + λ²) / det(J)` with the default zero-mode threshold.
pub fn gy_ratio(op: &SlOperator1D, lambda: f64, steps: usize) -> Result<f64, GyError> {
    gy_ratio_with_threshold(op, lambda, steps, op.zero_mode_threshold())
}

pub fn gy_ratio_with_threshold(
    op: &SlOperator1D,
    lambda: f64,
    steps: usize,
    threshold: f64,
) -> Result<f64, GyError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(GyError::InvalidOperator(format!("lambda must be nonnegative, got {lambda}")));
    }
    let base = gy_determinant(op, steps, Storage::BoundaryOnly)?.value;
    if base.abs() < threshold {
        return Err(GyError::ZeroMode {
            value: base.abs(),
            threshold,
        });
    }
    if lambda == 0.0 {
        return Ok(1.0);
    }
    let shifted = op.clone().with_shift(op.shift + lambda * lambda)?;
    let top = gy_determinant(&shifted, steps, Storage::BoundaryOnly)?.value;
    Ok(top / base)
}

/// Number of negative eigenvalues, read off the stored solution's sign
/// changes (Sturm oscillation).
pub fn morse_index(r: &GyResult) -> Result<usize, GyError> {
    let sol = r.solution.as_ref().ok_or(GyError::MissingSolution)?;
    let mut s = SignChanges::default();
    for &y in &sol.y[1..] {
        s.push(y);
    }
    Ok(s.count)
}

/// Second derivatives of a potential, row-major `dim × dim`.
pub trait HessianSource: Send + Sync {
    fn dim(&self) -> usize;
    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>, ExprError>;
}

/// Adapts a closure into a [`HessianSource`].
pub struct HessianFn<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> HessianSource for HessianFn<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        Ok((self.f)(x))
    }
}

/// Direction used to project a Hessian onto a scalar coefficient.
#[derive(Debug, Clone, PartialEq)]
pub enum Direction {
    Fixed(Vec<f64>),
    /// Unit tangent of the trajectory at each time.
    Tangent,
}

fn quadratic_form(h: &[f64], d: &[f64]) -> f64 {
    let n = d.len();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += d[i] * h[i * n + j] * d[j];
        }
    }
    acc
}

fn unit_tangent(traj: &Trajectory, t: f64) -> Option<Vec<f64>> {
    let mut v = traj.velocity_at(t);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// One-dimensional projection of a multi-dimensional Hessian along a
/// trajectory: `w(t) = dᵀ V''(z(t)) d`. The result is flagged exploratory.
pub fn project_along_trajectory(
    hessian: Arc<dyn HessianSource>,
    traj: Arc<Trajectory>,
    direction: Direction,
    mass: f64,
    sign: SignConvention,
) -> Result<SlOperator1D, GyError> {
    let dim = hessian.dim();
    if traj.dim() != dim {
        return Err(GyError::DimensionMismatch {
            expected: dim,
            got: traj.dim(),
        });
    }
    if let Direction::Fixed(d) = &direction {
        if d.len() != dim {
            return Err(GyError::DimensionMismatch {
                expected: dim,
                got: d.len(),
            });
        }
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(GyError::NotUnitDirection(norm));
        }
    }

    // Surface evaluation failures now rather than as NaN mid-integration.
    for (i, &t) in traj.times.iter().enumerate() {
        let h = hessian.hessian(&traj.positions[i])?;
        if h.len() != dim * dim {
            return Err(GyError::DimensionMismatch {
                expected: dim * dim,
                got: h.len(),
            });
        }
        if direction == Direction::Tangent && unit_tangent(&traj, t).is_none() {
            return Err(GyError::DegenerateTangent(t));
        }
    }

    let (a, b) = traj.span();
    let coeff = {
        let traj = Arc::clone(&traj);
        Coefficient::func(move |t| {
            let z = traj.position_at(t);
            let Ok(h) = hessian.hessian(&z) else {
                return f64::NAN;
            };
            match &direction {
                Direction::Fixed(d) => quadratic_form(&h, d),
                Direction::Tangent => match unit_tangent(&traj, t) {
                    Some(d) => quadratic_form(&h, &d),
                    None => f64::NAN,
                },
            }
        })
    };
    Ok(SlOperator1D::new(mass, coeff, a, b, sign)?.mark_exploratory())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    const STEPS: usize = 100_000;

    #[test]
    fn free_operator_gives_interval_length() {
        let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
        let r = gy_determinant(&op, STEPS, Storage::BoundaryOnly).unwrap();
        assert!((r.value - PI).abs() <= 1e-12);
        assert!((r.derivative - 1.0).abs() <= 1e-12);
        assert_eq!(r.zero_crossings, 0);
        assert!(r.solution.is_none());
    }

    #[test]
    fn euclidean_harmonic_is_sinh() {
        let op = SlOperator1D::new(1.0, Coefficient::Constant(4.0), 0.0, 1.0, SignConvention::Euclidean).unwrap();
        let r = gy_determinant(&op, STEPS, Storage::BoundaryOnly).unwrap();
        assert!((r.value - 2f64.sinh() / 2.0).abs() <= 1e-8);
    }

    #[test]
    fn real_time_harmonic_is_sine() {
        let op = SlOperator1D::harmonic(1.0, 1.0, 0.0, FRAC_PI_2, SignConvention::RealTime).unwrap();
        let r = gy_determinant(&op, STEPS, Storage::BoundaryOnly).unwrap();
        assert!((r.value - 1.0).abs() <= 1e-8);
    }

    #[test]
    fn mass_scales_the_frequency() {
        // w = m ω² with m = 3, ω = 2, Euclidean: y = sinh(2t)/2.
        let op = SlOperator1D::harmonic(3.0, 2.0, 0.0, 1.0, SignConvention::Euclidean).unwrap();
        let r = gy_determinant(&op, STEPS, Storage::BoundaryOnly).unwrap();
        assert!((r.value - 2f64.sinh() / 2.0).abs() <= 1e-8);
    }

    #[test]
    fn ratio_examples() {
        let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
        assert_eq!(gy_ratio(&op, 0.0, STEPS).unwrap(), 1.0);
        let r = gy_ratio(&op, 0.5, STEPS).unwrap();
        let closed = (0.5 * PI).sinh() / (0.5 * PI);
        assert!((r - closed).abs() <= 1e-9, "{r} vs {closed}");
    }

    #[test]
    fn zero_mode_is_rejected() {
        // Real-time harmonic on [0, π]: y = sin t vanishes at b.
        let op = SlOperator1D::harmonic(1.0, 1.0, 0.0, PI, SignConvention::RealTime).unwrap();
        let err = gy_ratio(&op, 0.3, STEPS).unwrap_err();
        assert!(matches!(err, GyError::ZeroMode { .. }), "{err}");
    }

    #[test]
    fn morse_index_examples() {
        let free = SlOperator1D::free(1.0, 0.0, PI).unwrap();
        let r = gy_determinant(&free, 1000, Storage::Full).unwrap();
        assert_eq!(morse_index(&r).unwrap(), 0);

        let osc = SlOperator1D::harmonic(1.0, 1.0, 0.0, 2.5 * PI, SignConvention::RealTime).unwrap();
        let r = gy_determinant(&osc, 10_000, Storage::Full).unwrap();
        assert_eq!(morse_index(&r).unwrap(), 2);
        assert_eq!(r.zero_crossings, 2);

        for omega in [0.5, 3.0, 10.0] {
            let e = SlOperator1D::harmonic(1.0, omega, 0.0, 4.0, SignConvention::Euclidean).unwrap();
            let r = gy_determinant(&e, 10_000, Storage::Full).unwrap();
            assert_eq!(morse_index(&r).unwrap(), 0);
        }

        let no_samples = gy_determinant(&free, 1000, Storage::BoundaryOnly).unwrap();
        assert_eq!(morse_index(&no_samples), Err(GyError::MissingSolution));
    }

    #[test]
    fn invalid_operators_are_rejected() {
        assert!(SlOperator1D::free(0.0, 0.0, 1.0).is_err());
        assert!(SlOperator1D::free(1.0, 1.0, 1.0).is_err());
        let bad = Coefficient::expr("1/(t - 0.5)".parse().unwrap(), "t", BTreeMap::new());
        assert!(SlOperator1D::new(1.0, bad, 0.0, 1.0, SignConvention::RealTime).is_err());
        let unbound = Coefficient::expr("k*t".parse().unwrap(), "t", BTreeMap::new());
        assert!(matches!(
            SlOperator1D::new(1.0, unbound, 0.0, 1.0, SignConvention::RealTime),
            Err(GyError::Expr(ExprError::Unbound(_)))
        ));
        let op = SlOperator1D::free(1.0, 0.0, 1.0).unwrap();
        assert!(op.clone().with_shift(-1.0).is_err());
        assert_eq!(gy_determinant(&op, 5, Storage::BoundaryOnly), Err(GyError::TooFewSteps(5)));
    }

    #[test]
    fn overflow_reports_progress() {
        let op = SlOperator1D::new(1.0, Coefficient::Constant(1e4), 0.0, 100.0, SignConvention::Euclidean).unwrap();
        let err = gy_determinant(&op, 100_000, Storage::BoundaryOnly).unwrap_err();
        match err {
            GyError::Integration(OdeError::Overflow { t, .. }) => assert!(t > 0.0 && t < 100.0),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn expression_coefficient_matches_constant() {
        let mut b = BTreeMap::new();
        b.insert("omega".to_string(), 2.0);
        let c = Coefficient::expr("omega^2 + 0*t".parse().unwrap(), "t", b);
        let op = SlOperator1D::new(1.0, c, 0.0, 1.0, SignConvention::Euclidean).unwrap();
        let r = gy_determinant(&op, STEPS, Storage::BoundaryOnly).unwrap();
        assert!((r.value - 2f64.sinh() / 2.0).abs() <= 1e-8);
    }
}
