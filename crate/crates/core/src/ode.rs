//! Fixed-step classical Runge-Kutta integration.
//!
//! The scalar driver integrates `y'' = f(t) y` as the first-order system
//! `(y, y')`. It backs every Gelfand-Yaglom evaluation in the crate, so it
//! is written to stream samples through a visitor rather than allocate.
//! [`Rk4System`] is the general vector stepper used for nonlinear
//! trajectories.

use serde::Serialize;
use thiserror::Error;

/// Upper bound on the automatically chosen step count.
pub const MAX_DEFAULT_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("interval [{a}, {b}] is empty or not finite")]
    BadInterval { a: f64, b: f64 },
    #[error("step count must be at least 1")]
    NoSteps,
    #[error("coefficient is not finite at t = {t}")]
    NonFiniteCoefficient { t: f64 },
    #[error("solution overflowed at step {step} (t = {t})")]
    Overflow { step: usize, t: f64 },
}

/// Whether a solve keeps every sample or only the final state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Storage {
    Full,
    #[default]
    BoundaryOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IvpSolution {
    pub grid: Vec<f64>,
    pub y: Vec<f64>,
    pub yprime: Vec<f64>,
    pub step: f64,
}

impl IvpSolution {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn last(&self) -> (f64, f64) {
        (*self.y.last().unwrap(), *self.yprime.last().unwrap())
    }
}

/// Step count giving roughly `tol` global error for smooth coefficients:
/// `10 (b - a) / tol^(1/4)`, capped at [`MAX_DEFAULT_STEPS`].
pub fn default_steps(a: f64, b: f64, tol: f64) -> usize {
    let n = 10.0 * (b - a) / tol.abs().powf(0.25);
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, MAX_DEFAULT_STEPS)
    } else {
        MAX_DEFAULT_STEPS
    }
}

fn check_interval(a: f64, b: f64, steps: usize) -> Result<(), OdeError> {
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(OdeError::BadInterval { a, b });
    }
    if steps == 0 {
        return Err(OdeError::NoSteps);
    }
    Ok(())
}

fn kahan_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Walk the RK4 solution of `y'' = f(t) y`, calling `visit(i, t, y, y')`
/// at every grid point including both ends. Returns the final `(y, y')`.
pub fn rk4_walk<F, V>(
    f: F,
    a: f64,
    b: f64,
    y0: f64,
    yp0: f64,
    steps: usize,
    mut visit: V,
) -> Result<(f64, f64), OdeError>
where
    F: Fn(f64) -> f64,
    V: FnMut(usize, f64, f64, f64),
{
    check_interval(a, b, steps)?;
    let h = (b - a) / steps as f64;
    let eval = |t: f64| {
        let v = f(t);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(OdeError::NonFiniteCoefficient { t })
        }
    };

    let (mut y, mut yp) = (y0, yp0);
    // Compensation terms keep rounding from growing with the step count.
    let (mut cy, mut cp) = (0.0, 0.0);
    let mut f_left = eval(a)?;
    visit(0, a, y, yp);
    for i in 0..steps {
        let t = a + i as f64 * h;
        let t_next = if i + 1 == steps { b } else { a + (i + 1) as f64 * h };
        let f_mid = eval(t + 0.5 * h)?;
        let f_right = eval(t_next)?;

        let k1y = yp;
        let k1p = f_left * y;
        let k2y = yp + 0.5 * h * k1p;
        let k2p = f_mid * (y + 0.5 * h * k1y);
        let k3y = yp + 0.5 * h * k2p;
        let k3p = f_mid * (y + 0.5 * h * k2y);
        let k4y = yp + h * k3p;
        let k4p = f_right * (y + h * k3y);

        kahan_add(&mut y, &mut cy, h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y));
        kahan_add(&mut yp, &mut cp, h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p));
        if !(y.is_finite() && yp.is_finite()) {
            return Err(OdeError::Overflow {
                step: i + 1,
                t: t_next,
            });
        }
        f_left = f_right;
        visit(i + 1, t_next, y, yp);
    }
    Ok((y, yp))
}

/// Classical RK4 for `y'' = f(t) y` on `[a, b]` with `steps` uniform steps.
pub fn integrate_rk4<F>(
    f: F,
    a: f64,
    b: f64,
    y0: f64,
    yp0: f64,
    steps: usize,
) -> Result<IvpSolution, OdeError>
where
    F: Fn(f64) -> f64,
{
    check_interval(a, b, steps)?;
    let mut sol = IvpSolution {
        grid: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        yprime: Vec::with_capacity(steps + 1),
        step: (b - a) / steps as f64,
    };
    rk4_walk(f, a, b, y0, yp0, steps, |_, t, y, yp| {
        sol.grid.push(t);
        sol.y.push(y);
        sol.yprime.push(yp);
    })?;
    Ok(sol)
}

/// Same integration keeping only the endpoint values, in O(1) memory.
pub fn integrate_rk4_endpoint<F>(
    f: F,
    a: f64,
    b: f64,
    y0: f64,
    yp0: f64,
    steps: usize,
) -> Result<(f64, f64), OdeError>
where
    F: Fn(f64) -> f64,
{
    rk4_walk(f, a, b, y0, yp0, steps, |_, _, _, _| {})
}

/// RK4 stepper for a general first-order system `u' = g(t, u)`.
pub struct Rk4System {
    dim: usize,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4System {
    pub fn new(dim: usize) -> Self {
        Rk4System {
            dim,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
        }
    }

    /// Advance `u` from `t` to `t + h` in place. `g(t, u, du)` writes the
    /// derivative into `du`.
    pub fn step<G>(&mut self, g: &mut G, t: f64, h: f64, u: &mut [f64])
    where
        G: FnMut(f64, &[f64], &mut [f64]),
    {
        debug_assert_eq!(u.len(), self.dim);
        let [k1, k2, k3, k4] = &mut self.k;
        g(t, u, k1);
        for i in 0..self.dim {
            self.tmp[i] = u[i] + 0.5 * h * k1[i];
        }
        g(t + 0.5 * h, &self.tmp, k2);
        for i in 0..self.dim {
            self.tmp[i] = u[i] + 0.5 * h * k2[i];
        }
        g(t + 0.5 * h, &self.tmp, k3);
        for i in 0..self.dim {
            self.tmp[i] = u[i] + h * k3[i];
        }
        g(t + h, &self.tmp, k4);
        for i in 0..self.dim {
            u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}
