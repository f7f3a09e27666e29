//! Classical paths, actions and the fluctuation prefactor of the
//! semiclassical propagator.
//!
//! The prefactor is normalized in the Van Vleck form
//! `|K| = sqrt(m / (2π ħ |y(b)|))`, where `y(b)` is the Gelfand-Yaglom
//! determinant of the Jacobi operator along the path. For the free particle
//! `y(b) = T` and this is the exact free kernel amplitude. The phase
//! (Maslov factor) is not assigned; the Morse index is reported instead.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, Expr, ExprError};
use crate::gy::{self, Coefficient, GyError, HessianSource, SignConvention, SlOperator1D};
use crate::ode::{Rk4System, Storage};

pub const CONVENTION_NOTE: &str = "magnitude = sqrt(m / (2 pi hbar |y(b)|)), normalized so the free particle \
     reproduces sqrt(m / (2 pi hbar T)); phase not assigned, Morse index reported";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemiclassicalError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shooting did not converge after {iterations} iterations (endpoint mismatch {mismatch:e})")]
    ShootingFailed { iterations: usize, mismatch: f64 },
    #[error("conjugate point: endpoint map is singular (|det| = {det:e})")]
    ConjugatePoint { det: f64 },
    #[error("caustic: |y(b)| = {value:e} is below the threshold {threshold:e}, prefactor diverges")]
    Caustic { value: f64, threshold: f64 },
    #[error("trajectory integration produced a non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("discrete determinant overflowed at N = {0}")]
    Overflow(usize),
    #[error(transparent)]
    Gy(#[from] GyError),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

/// A potential `V(x₁..x_d)` with its symbolic gradient and Hessian.
#[derive(Debug, Clone)]
pub struct Potential {
    expr: Expr,
    vars: Vec<String>,
    params: BTreeMap<String, f64>,
    gradient: Vec<Expr>,
    hessian: Vec<Expr>,
}

struct PointBindings<'a> {
    vars: &'a [String],
    x: &'a [f64],
    params: &'a BTreeMap<String, f64>,
}

impl Bindings for PointBindings<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        match self.vars.iter().position(|v| v == name) {
            Some(i) => Some(self.x[i]),
            None => self.params.get(name).copied(),
        }
    }
}

impl Potential {
    pub fn new(expr: Expr, vars: &[&str], params: BTreeMap<String, f64>) -> Self {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let gradient: Vec<Expr> = vars.iter().map(|v| expr.differentiate(v)).collect();
        let hessian = gradient
            .iter()
            .flat_map(|g| vars.iter().map(move |v| g.differentiate(v)))
            .collect();
        Potential {
            expr,
            vars,
            params,
            gradient,
            hessian,
        }
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    fn bind<'a>(&'a self, x: &'a [f64]) -> PointBindings<'a> {
        PointBindings {
            vars: &self.vars,
            x,
            params: &self.params,
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, ExprError> {
        self.expr.evaluate(&self.bind(x))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let b = self.bind(x);
        self.gradient.iter().map(|g| g.evaluate(&b)).collect()
    }

    pub fn hessian_entries(&self) -> &[Expr] {
        &self.hessian
    }
}

impl HessianSource for Potential {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn hessian(&self, x: &[f64]) -> Result<Vec<f64>, ExprError> {
        let b = self.bind(x);
        self.hessian.iter().map(|h| h.evaluate(&b)).collect()
    }
}

/// A sampled path `z(t)` with its velocity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    fn segment(&self, t: f64) -> (usize, f64, f64) {
        let n = self.times.len();
        let i = self.times.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let h = self.times[i + 1] - self.times[i];
        (i, (t - self.times[i]) / h, h)
    }

    /// Cubic Hermite interpolation from positions and velocities.
    pub fn position_at(&self, t: f64) -> Vec<f64> {
        let (i, s, h) = self.segment(t);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        (0..self.dim())
            .map(|k| {
                h00 * self.positions[i][k]
                    + h10 * h * self.velocities[i][k]
                    + h01 * self.positions[i + 1][k]
                    + h11 * h * self.velocities[i + 1][k]
            })
            .collect()
    }

    pub fn velocity_at(&self, t: f64) -> Vec<f64> {
        let (i, s, h) = self.segment(t);
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        (0..self.dim())
            .map(|k| {
                d00 * self.positions[i][k]
                    + d10 * self.velocities[i][k]
                    + d01 * self.positions[i + 1][k]
                    + d11 * self.velocities[i + 1][k]
            })
            .collect()
    }
}

struct Flow {
    z_end: Vec<f64>,
    jacobian: DMatrix<f64>,
    samples: Option<Trajectory>,
}

/// Integrate `m z'' = -∇V` together with the variational equation for
/// `∂z(t)/∂v₀`.
#[allow(clippy::too_many_arguments)]
fn integrate_flow(
    pot: &Potential,
    mass: f64,
    start: &[f64],
    v0: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
    keep: bool,
) -> Result<Flow, SemiclassicalError> {
    let d = start.len();
    let n_state = 2 * d + 2 * d * d;
    let mut u = vec![0.0; n_state];
    u[..d].copy_from_slice(start);
    u[d..2 * d].copy_from_slice(v0);
    // Y(0) = 0, Y'(0) = I
    for i in 0..d {
        u[2 * d + d * d + i * d + i] = 1.0;
    }
    let failure: Cell<Option<ExprError>> = Cell::new(None);
    let mut rhs = |_t: f64, u: &[f64], du: &mut [f64]| {
        let z = &u[..d];
        let (grad, hess) = match (pot.gradient(z), pot.hessian(z)) {
            (Ok(g), Ok(h)) => (g, h),
            (Err(e), _) | (_, Err(e)) => {
                let first = failure.take().unwrap_or(e);
                failure.set(Some(first));
                du.iter_mut().for_each(|x| *x = f64::NAN);
                return;
            }
        };
        let y = &u[2 * d..2 * d + d * d];
        let yp = &u[2 * d + d * d..];
        du[..d].copy_from_slice(&u[d..2 * d]);
        for i in 0..d {
            du[d + i] = -grad[i] / mass;
        }
        du[2 * d..2 * d + d * d].copy_from_slice(yp);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += hess[i * d + k] * y[k * d + j];
                }
                du[2 * d + d * d + i * d + j] = -acc / mass;
            }
        }
    };

    let h = (t1 - t0) / steps as f64;
    let mut stepper = Rk4System::new(n_state);
    let mut samples = keep.then(|| Trajectory {
        times: Vec::with_capacity(steps + 1),
        positions: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
        start: start.to_vec(),
        end: Vec::new(),
    });
    let record = |t: f64, u: &[f64], s: &mut Option<Trajectory>| {
        if let Some(s) = s.as_mut() {
            s.times.push(t);
            s.positions.push(u[..d].to_vec());
            s.velocities.push(u[d..2 * d].to_vec());
        }
    };
    record(t0, &u, &mut samples);
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        stepper.step(&mut rhs, t, h, &mut u);
        if let Some(e) = failure.take() {
            return Err(e.into());
        }
        let t_next = if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h };
        if u.iter().any(|x| !x.is_finite()) {
            return Err(SemiclassicalError::NonFinite(t_next));
        }
        record(t_next, &u, &mut samples);
    }
    let z_end = u[..d].to_vec();
    if let Some(s) = samples.as_mut() {
        s.end = z_end.clone();
    }
    Ok(Flow {
        jacobian: DMatrix::from_row_slice(d, d, &u[2 * d..2 * d + d * d]),
        z_end,
        samples,
    })
}

const MAX_NEWTON: usize = 50;

/// Classical path from `y` at `t0` to `x` at `t1` by Newton shooting on the
/// initial velocity. Fails at conjugate points, where the endpoint map
/// `v₀ ↦ z(t1)` is singular.
#[allow(clippy::too_many_arguments)]
pub fn classical_trajectory(
    pot: &Potential,
    mass: f64,
    y: &[f64],
    x: &[f64],
    t0: f64,
    t1: f64,
    steps: usize,
    tol: f64,
) -> Result<Trajectory, SemiclassicalError> {
    let d = pot.dim();
    if y.len() != d || x.len() != d {
        return Err(SemiclassicalError::InvalidInput(format!(
            "endpoints must have dimension {d}"
        )));
    }
    if !(t1 > t0) || !(mass > 0.0) || steps == 0 || !(tol > 0.0) {
        return Err(SemiclassicalError::InvalidInput(
            "need t1 > t0, mass > 0, steps >= 1 and tol > 0".into(),
        ));
    }
    let span = t1 - t0;
    let mismatch_of = |z: &[f64]| -> f64 {
        z.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    };

    let mut v: Vec<f64> = x.iter().zip(y).map(|(b, a)| (b - a) / span).collect();
    let mut flow = integrate_flow(pot, mass, y, &v, t0, t1, steps, false)?;
    let mut mismatch = mismatch_of(&flow.z_end);
    for _ in 0..MAX_NEWTON {
        let det = flow.jacobian.determinant();
        if det.abs() < 1e-8 * span.powi(d as i32) {
            return Err(SemiclassicalError::ConjugatePoint { det: det.abs() });
        }
        if mismatch <= tol {
            let flow = integrate_flow(pot, mass, y, &v, t0, t1, steps, true)?;
            return Ok(flow.samples.expect("samples requested"));
        }
        let residual = DVector::from_iterator(d, flow.z_end.iter().zip(x).map(|(a, b)| a - b));
        let delta = flow
            .jacobian
            .clone()
            .lu()
            .solve(&residual)
            .ok_or(SemiclassicalError::ConjugatePoint { det: det.abs() })?;

        // Backtrack if the full step makes things worse.
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(delta.iter()).map(|(a, b)| a - scale * b).collect();
            let next = integrate_flow(pot, mass, y, &trial, t0, t1, steps, false);
            match next {
                Ok(next) => {
                    let m = mismatch_of(&next.z_end);
                    if m < mismatch || scale < 1e-3 {
                        v = trial;
                        flow = next;
                        mismatch = m;
                        break;
                    }
                }
                Err(e) if scale < 1e-3 => return Err(e),
                Err(_) => {}
            }
            scale *= 0.5;
        }
    }
    Err(SemiclassicalError::ShootingFailed {
        iterations: MAX_NEWTON,
        mismatch,
    })
}

type Curve = Box<dyn Fn(f64) -> f64>;

/// Closed-form path for `V = ½ m ω² x²` in one dimension (`ω = 0` is the
/// free particle).
pub fn harmonic_trajectory(
    omega: f64,
    y: f64,
    x: f64,
    t0: f64,
    t1: f64,
    steps: usize,
) -> Result<Trajectory, SemiclassicalError> {
    if !(t1 > t0) || steps == 0 {
        return Err(SemiclassicalError::InvalidInput("need t1 > t0 and steps >= 1".into()));
    }
    let span = t1 - t0;
    let (pos, vel): (Curve, Curve) = if omega == 0.0 {
        let v = (x - y) / span;
        (Box::new(move |s| y + v * s), Box::new(move |_| v))
    } else {
        let denom = (omega * span).sin();
        if denom.abs() < 1e-12 {
            return Err(SemiclassicalError::ConjugatePoint { det: denom.abs() / omega });
        }
        (
            Box::new(move |s| (y * (omega * (span - s)).sin() + x * (omega * s).sin()) / denom),
            Box::new(move |s| {
                omega * (-y * (omega * (span - s)).cos() + x * (omega * s).cos()) / denom
            }),
        )
    };
    let times: Vec<f64> = (0..=steps)
        .map(|i| if i == steps { t1 } else { t0 + span * i as f64 / steps as f64 })
        .collect();
    Ok(Trajectory {
        positions: times.iter().map(|t| vec![pos(t - t0)]).collect(),
        velocities: times.iter().map(|t| vec![vel(t - t0)]).collect(),
        times,
        start: vec![y],
        end: vec![x],
    })
}

/// Composite Simpson rule on uniform samples; the 3/8 rule closes an odd
/// number of intervals.
pub(crate) fn simpson(values: &[f64], h: f64) -> f64 {
    let n = values.len() - 1;
    match n {
        0 => 0.0,
        1 => 0.5 * h * (values[0] + values[1]),
        _ => {
            let (even_part, tail) = if n % 2 == 0 { (n, 0) } else { (n - 3, 3) };
            let mut acc = 0.0;
            if even_part > 0 {
                let mut s = values[0] + values[even_part];
                for (i, v) in values.iter().enumerate().take(even_part).skip(1) {
                    s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
                }
                acc += s * h / 3.0;
            }
            if tail == 3 {
                let v = &values[n - 3..];
                acc += 3.0 * h / 8.0 * (v[0] + 3.0 * v[1] + 3.0 * v[2] + v[3]);
            }
            acc
        }
    }
}

/// Classical action `∫ (m/2 |z'|² - V(z)) dt` by composite Simpson.
pub fn action(traj: &Trajectory, pot: &Potential, mass: f64) -> Result<f64, SemiclassicalError> {
    if traj.times.len() < 2 {
        return Err(SemiclassicalError::InvalidInput("trajectory needs two samples".into()));
    }
    let lagrangian = traj
        .positions
        .iter()
        .zip(&traj.velocities)
        .map(|(z, v)| {
            let kinetic = 0.5 * mass * v.iter().map(|c| c * c).sum::<f64>();
            Ok(kinetic - pot.value(z)?)
        })
        .collect::<Result<Vec<f64>, ExprError>>()?;
    let (a, b) = traj.span();
    Ok(simpson(&lagrangian, (b - a) / (traj.times.len() - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prefactor {
    pub magnitude: f64,
    pub morse_index: usize,
    pub gy_value: f64,
    pub convention_note: &'static str,
}

/// `sqrt(m / (2π ħ |y(b)|))` with the Morse index of the Jacobi operator.
pub fn fluctuation_prefactor(
    op: &SlOperator1D,
    hbar: f64,
    steps: usize,
) -> Result<Prefactor, SemiclassicalError> {
    if !(hbar > 0.0 && hbar.is_finite()) {
        return Err(SemiclassicalError::InvalidInput(format!("hbar must be positive, got {hbar}")));
    }
    let r = gy::gy_determinant(op, steps, Storage::BoundaryOnly)?;
    let threshold = op.zero_mode_threshold();
    if r.value.abs() < threshold {
        return Err(SemiclassicalError::Caustic {
            value: r.value.abs(),
            threshold,
        });
    }
    Ok(Prefactor {
        magnitude: (op.mass() / (2.0 * std::f64::consts::PI * hbar * r.value.abs())).sqrt(),
        morse_index: r.zero_crossings,
        gy_value: r.value,
        convention_note: CONVENTION_NOTE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagatorEstimate {
    pub action: f64,
    pub prefactor_magnitude: f64,
    pub hbar: f64,
    pub mass: f64,
    pub morse_index: usize,
    pub convention_note: &'static str,
}

/// Jacobi operator `-m d² - V''(z(t))` along a one-dimensional path.
pub fn jacobi_operator(
    pot: Arc<Potential>,
    traj: Arc<Trajectory>,
    mass: f64,
) -> Result<SlOperator1D, SemiclassicalError> {
    if pot.dim() != 1 || traj.dim() != 1 {
        return Err(SemiclassicalError::InvalidInput(
            "the Jacobi operator is built for one-dimensional paths".into(),
        ));
    }
    let (a, b) = traj.span();
    let coeff = Coefficient::func(move |t| {
        let z = traj.position_at(t);
        pot.hessian(&z).map(|h| h[0]).unwrap_or(f64::NAN)
    });
    Ok(SlOperator1D::new(mass, coeff, a, b, SignConvention::RealTime)?)
}

/// Classical action plus fluctuation prefactor for a one-dimensional
/// potential between `y` at `t0` and `x` at `t1`.
#[allow(clippy::too_many_arguments)]
pub fn propagator_estimate(
    pot: &Potential,
    mass: f64,
    y: f64,
    x: f64,
    t0: f64,
    t1: f64,
    hbar: f64,
    steps: usize,
    tol: f64,
) -> Result<PropagatorEstimate, SemiclassicalError> {
    let traj = classical_trajectory(pot, mass, &[y], &[x], t0, t1, steps, tol)?;
    let s = action(&traj, pot, mass)?;
    let op = jacobi_operator(Arc::new(pot.clone()), Arc::new(traj), mass)?;
    let p = fluctuation_prefactor(&op, hbar, steps.max(gy::MIN_STEPS))?;
    Ok(PropagatorEstimate {
        action: s,
        prefactor_magnitude: p.magnitude,
        hbar,
        mass,
        morse_index: p.morse_index,
        convention_note: CONVENTION_NOTE,
    })
}

/// Determinant of the `(N-1) × (N-1)` Hessian of the time-sliced quadratic
/// fluctuation action, normalized by `Δt (Δt/m)^(N-1)` so that it tends to
/// the Gelfand-Yaglom value `y(b)` as `N → ∞`.
///
/// The Hessian has diagonal `2m/Δt + Δt q(t_j)` and off-diagonal `-m/Δt`;
/// its determinant follows the three-term recursion, computed here in
/// normalized form with periodic rescaling to avoid overflow.
pub fn discrete_fluctuation_det(op: &SlOperator1D, n: usize) -> Result<f64, SemiclassicalError> {
    if n < 2 {
        return Err(SemiclassicalError::InvalidInput(format!("N must be at least 2, got {n}")));
    }
    let (a, b) = op.interval();
    let dt = (b - a) / n as f64;
    let k = dt * dt / op.mass();
    const BIG: f64 = 1e150;

    // p[j] = det(first j rows) / (m/Δt)^j
    let (mut prev, mut cur) = (1.0_f64, 0.0_f64);
    let mut log_scale = 0.0_f64;
    for j in 1..n {
        let t = a + j as f64 * dt;
        let q = op.potential_term(t);
        if !q.is_finite() {
            return Err(GyError::Integration(crate::ode::OdeError::NonFiniteCoefficient { t }).into());
        }
        let diag = 2.0 + k * q;
        let next = if j == 1 { diag } else { diag * cur - prev };
        prev = if j == 1 { 1.0 } else { cur };
        cur = next;
        if cur.abs() > BIG {
            prev /= BIG;
            cur /= BIG;
            log_scale += BIG.ln();
        }
        if !cur.is_finite() {
            return Err(SemiclassicalError::Overflow(n));
        }
    }
    let value = dt * cur * log_scale.exp();
    if !value.is_finite() {
        return Err(SemiclassicalError::Overflow(n));
    }
    Ok(value)
}
