//! Explicit eigenvalues.
//!
//! One-dimensional operators are handled by shooting: the Gelfand-Yaglom
//! boundary value of `J - μ` vanishes exactly at eigenvalues, and by Sturm
//! oscillation the number of interior zeros of the solution counts the
//! eigenvalues below `μ`. Multi-dimensional Hessians are discretized with
//! central differences and handed to a Lanczos solver.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::expr::{Bindings, Expr, ExprError};
use crate::gy::{GyError, SignConvention, SlOperator1D};
use crate::ode::Storage;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("bracket scan exhausted after {scans} points: found {found} of {requested} eigenvalues")]
    BracketExhausted {
        found: usize,
        requested: usize,
        scans: usize,
        partial: Box<Spectrum>,
    },
    #[error("Lanczos did not converge within {matvecs} operator applications: {} of {requested} eigenvalues converged", converged.eigenvalues.len())]
    NotConverged {
        requested: usize,
        matvecs: usize,
        converged: Box<Spectrum>,
    },
    #[error("curvature evaluation failed at grid point {index}: {source}")]
    Curvature { index: usize, source: ExprError },
    #[error(transparent)]
    Gy(#[from] GyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Shooting,
    Dense,
    Lanczos,
}

/// Eigenvalues equal to within the solver tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    pub value: f64,
    pub multiplicity: usize,
}

/// Ascending eigenvalues with provenance. Degenerate eigenvalues appear
/// once per copy found and are summarized in `clusters`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub method: Method,
    pub count_requested: usize,
    /// Per-eigenvalue tolerance: bracket width for shooting, residual bound
    /// for Lanczos.
    pub residual_tolerances: Vec<f64>,
    /// Achieved `‖Av - λv‖ / ‖v‖` for iterative methods, bracket width for
    /// shooting, empty for dense solves.
    pub residuals: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub domain_info: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Spectrum {
    /// A spectrum known in closed form, e.g. for tests or tail models.
    pub fn from_values(values: Vec<f64>, domain_info: impl Into<String>) -> Self {
        let n = values.len();
        build(values, Method::Dense, n, vec![0.0; n], Vec::new(), domain_info.into(), None)
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }
}

fn build(
    mut values: Vec<f64>,
    method: Method,
    count_requested: usize,
    residual_tolerances: Vec<f64>,
    residuals: Vec<f64>,
    domain_info: String,
    seed: Option<u64>,
) -> Spectrum {
    values.sort_by(f64::total_cmp);
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        let tol = residual_tolerances.get(i).copied().unwrap_or(0.0);
        let eps = tol.max(1e-10 * v.abs());
        match clusters.last_mut() {
            Some(c) if (v - c.value).abs() <= eps => c.multiplicity += 1,
            _ => clusters.push(Cluster {
                value: v,
                multiplicity: 1,
            }),
        }
    }
    Spectrum {
        eigenvalues: values,
        method,
        count_requested,
        residual_tolerances,
        residuals,
        clusters,
        domain_info,
        seed,
    }
}

// ---------------------------------------------------------------------------
// Shooting

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootingOptions {
    /// RK4 steps per boundary-value evaluation. Chosen from the highest
    /// expected eigenvalue when `None`.
    pub steps: Option<usize>,
    /// Maximum number of scan points before giving up.
    pub max_scan: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            steps: None,
            max_scan: 100_000,
        }
    }
}

struct PotentialRange {
    min: f64,
    max: f64,
}

fn potential_range(op: &SlOperator1D) -> PotentialRange {
    let (a, b) = op.interval();
    let n = 512;
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=n {
        let q = op.potential_term(a + (b - a) * i as f64 / n as f64);
        min = min.min(q);
        max = max.max(q);
    }
    PotentialRange { min, max }
}

/// RK4 steps resolving the oscillation of `J - μ` up to `mu_max`: about
/// 400 steps per radian of phase, at least 10⁴.
fn shooting_steps(op: &SlOperator1D, q_min: f64, mu_max: f64) -> usize {
    let phase = op.length() * ((mu_max - q_min).max(0.0) / op.mass()).sqrt();
    ((400.0 * phase).ceil() as usize).clamp(10_000, crate::ode::MAX_DEFAULT_STEPS)
}

/// Number of eigenvalues of `op` strictly below `lambda`, from the zero
/// count of the shooting solution.
pub fn count_below(op: &SlOperator1D, lambda: f64, steps: usize) -> Result<usize, SpectrumError> {
    Ok(op.shoot(lambda, steps, Storage::BoundaryOnly)?.zero_crossings)
}

/// Weyl estimate `L √(Λ/m) / π` of the same count for the free operator.
pub fn weyl_count(length: f64, mass: f64, lambda: f64) -> f64 {
    length * (lambda.max(0.0) / mass).sqrt() / std::f64::consts::PI
}

/// Lowest `count` eigenvalues by shooting on the spectral parameter.
pub fn eigenvalues_shooting(op: &SlOperator1D, count: usize, tol: f64) -> Result<Spectrum, SpectrumError> {
    eigenvalues_shooting_with(op, count, tol, ShootingOptions::default())
}

pub fn eigenvalues_shooting_with(
    op: &SlOperator1D,
    count: usize,
    tol: f64,
    opts: ShootingOptions,
) -> Result<Spectrum, SpectrumError> {
    if count == 0 {
        return Err(SpectrumError::InvalidArgument("count must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(SpectrumError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let (m, len) = (op.mass(), op.length());
    let unit = m * (std::f64::consts::PI / len).powi(2);
    let range = potential_range(op);
    let estimate_top = unit * (count as f64 + 1.0).powi(2) + range.max;
    let steps = opts
        .steps
        .unwrap_or_else(|| shooting_steps(op, range.min, 1.5 * estimate_top + unit));

    let shoot = |mu: f64| op.shoot(mu, steps, Storage::BoundaryOnly);
    let weyl_spacing = |n: usize| unit * (2 * n + 1) as f64;

    // Start below the spectrum: J >= unit + inf q.
    let mut mu = range.min - 1.0 - 0.1 * range.min.abs();
    let mut at = shoot(mu)?;
    while at.zero_crossings > 0 {
        mu -= 2.0 * (1.0 + mu.abs());
        at = shoot(mu)?;
    }
    let info = format!(
        "1D Sturm-Liouville on [{}, {}], mass {}, {} sign, shift {}",
        op.interval().0,
        op.interval().1,
        m,
        op.sign().name(),
        op.shift()
    );

    let mut values = Vec::with_capacity(count);
    let mut widths = Vec::with_capacity(count);
    let mut step = 0.5 * weyl_spacing(0);
    let mut scans = 0;
    while values.len() < count {
        scans += 1;
        if scans > opts.max_scan {
            let partial = build(values.clone(), Method::Shooting, count, vec![tol; values.len()], widths, info, None);
            return Err(SpectrumError::BracketExhausted {
                found: values.len(),
                requested: count,
                scans: opts.max_scan,
                partial: Box::new(partial),
            });
        }
        let next_mu = mu + step;
        let next = shoot(next_mu)?;
        match next.zero_crossings.saturating_sub(at.zero_crossings) {
            0 => {}
            1 => {
                let (root, width) = refine_root(&shoot, (mu, at.value), (next_mu, next.value), tol)?;
                values.push(root);
                widths.push(width);
            }
            _ => {
                // More than one eigenvalue in the step: refine.
                step *= 0.5;
                continue;
            }
        }
        mu = next_mu;
        at = next;
        step = 0.5 * weyl_spacing(at.zero_crossings);
    }
    Ok(build(values, Method::Shooting, count, vec![tol; count], widths, info, None))
}

/// Brent's method on the boundary value inside a sign-change bracket.
/// Returns the root estimate and the final bracket width, which is at most
/// `tol` unless `tol` is below the floating-point resolution at the root.
fn refine_root<F>(shoot: &F, lo: (f64, f64), hi: (f64, f64), tol: f64) -> Result<(f64, f64), SpectrumError>
where
    F: Fn(f64) -> Result<crate::gy::GyResult, GyError>,
{
    let (mut a, mut fa) = lo;
    let (mut b, mut fb) = hi;
    if fa == 0.0 {
        return Ok((a, 0.0));
    }
    if fb == 0.0 {
        return Ok((b, 0.0));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    loop {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 0.5 * tol.max(4.0 * f64::EPSILON * b.abs());
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            let width = if fb == 0.0 { 0.0 } else { (c - b).abs() };
            return Ok((b, width));
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation, or secant with two points.
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = shoot(b)?.value;
    }
}

// ---------------------------------------------------------------------------
// Discretized operators

/// A real symmetric linear operator known through its action.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// `c · I`, handy for exercising solvers on fully degenerate spectra.
#[derive(Debug, Clone, Copy)]
pub struct ScaledIdentity {
    pub dim: usize,
    pub scale: f64,
}

impl SymmetricOperator for ScaledIdentity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (o, i) in y.iter_mut().zip(x) {
            *o = self.scale * i;
        }
    }
}

/// Source of the potential curvature `V''` on the mesh.
#[derive(Debug, Clone)]
pub enum Curvature {
    Constant(f64),
    /// Expression in the coordinate names `vars` (one per dimension).
    Expr {
        expr: Expr,
        vars: Vec<String>,
        params: BTreeMap<String, f64>,
    },
    /// One value per interior grid point, first dimension fastest.
    Grid(Vec<f64>),
}

/// Finite-difference Hessian `-m Δ + sign(V'')` with homogeneous
/// Dirichlet conditions on a box.
#[derive(Debug, Clone, Serialize)]
pub struct MeshOperator {
    pub grid_shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub lower: Vec<f64>,
    pub mass: f64,
    pub sign: SignConvention,
    /// `V''` at each interior point, first dimension fastest.
    pub potential_curvature: Vec<f64>,
}

struct CoordBindings<'a> {
    vars: &'a [String],
    x: &'a [f64],
    params: &'a BTreeMap<String, f64>,
}

impl Bindings for CoordBindings<'_> {
    fn lookup(&self, name: &str) -> Option<f64> {
        match self.vars.iter().position(|v| v == name) {
            Some(i) => Some(self.x[i]),
            None => self.params.get(name).copied(),
        }
    }
}

/// Central-difference discretization on `domain` (one `(lo, hi)` per
/// dimension) with `grid_shape` interior points per dimension.
pub fn discretize(
    curvature: &Curvature,
    domain: &[(f64, f64)],
    grid_shape: &[usize],
    mass: f64,
    sign: SignConvention,
) -> Result<MeshOperator, SpectrumError> {
    let dims = grid_shape.len();
    if !(1..=3).contains(&dims) || domain.len() != dims {
        return Err(SpectrumError::InvalidArgument(format!(
            "need 1 to 3 dimensions with matching domain, got shape {grid_shape:?} and {} bounds",
            domain.len()
        )));
    }
    if grid_shape.iter().any(|&n| n < 3) {
        return Err(SpectrumError::InvalidArgument("grid_shape must be at least 3 per dimension".into()));
    }
    if domain.iter().any(|&(lo, hi)| !(hi > lo)) {
        return Err(SpectrumError::InvalidArgument("each domain interval must have hi > lo".into()));
    }
    if !(mass > 0.0) {
        return Err(SpectrumError::InvalidArgument(format!("mass must be positive, got {mass}")));
    }
    let spacing: Vec<f64> = domain
        .iter()
        .zip(grid_shape)
        .map(|(&(lo, hi), &n)| (hi - lo) / (n + 1) as f64)
        .collect();
    let total: usize = grid_shape.iter().product();
    let values = match curvature {
        Curvature::Constant(c) => vec![*c; total],
        Curvature::Grid(g) => {
            if g.len() != total {
                return Err(SpectrumError::InvalidArgument(format!(
                    "curvature grid has {} values, mesh has {total}",
                    g.len()
                )));
            }
            g.clone()
        }
        Curvature::Expr { expr, vars, params } => {
            if vars.len() != dims {
                return Err(SpectrumError::InvalidArgument(format!(
                    "{} coordinate names for a {dims}-dimensional mesh",
                    vars.len()
                )));
            }
            let mut out = Vec::with_capacity(total);
            let mut x = vec![0.0; dims];
            for index in 0..total {
                let mut rem = index;
                for d in 0..dims {
                    let i = rem % grid_shape[d];
                    rem /= grid_shape[d];
                    x[d] = domain[d].0 + (i + 1) as f64 * spacing[d];
                }
                let v = expr
                    .evaluate(&CoordBindings { vars, x: &x, params })
                    .map_err(|source| SpectrumError::Curvature { index, source })?;
                out.push(v);
            }
            out
        }
    };
    Ok(MeshOperator {
        grid_shape: grid_shape.to_vec(),
        spacing,
        lower: domain.iter().map(|d| d.0).collect(),
        mass,
        sign,
        potential_curvature: values,
    })
}

impl MeshOperator {
    pub fn dims(&self) -> usize {
        self.grid_shape.len()
    }

    pub fn describe(&self) -> String {
        format!(
            "{}D mesh {:?}, spacing {:?}, mass {}, {} sign, Dirichlet",
            self.dims(),
            self.grid_shape,
            self.spacing,
            self.mass,
            self.sign.name()
        )
    }
}

impl SymmetricOperator for MeshOperator {
    fn dim(&self) -> usize {
        self.grid_shape.iter().product()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let dims = self.dims();
        let mut strides = [1usize; 3];
        for d in 1..dims {
            strides[d] = strides[d - 1] * self.grid_shape[d - 1];
        }
        let coef: Vec<f64> = self.spacing.iter().map(|h| self.mass / (h * h)).collect();
        let mut diag_lap = 0.0;
        for c in &coef {
            diag_lap += 2.0 * c;
        }
        let mut idx = [0usize; 3];
        for (p, out) in y.iter_mut().enumerate() {
            let u = x[p];
            let mut acc = (diag_lap + self.sign.apply(self.potential_curvature[p])) * u;
            for d in 0..dims {
                if idx[d] > 0 {
                    acc -= coef[d] * x[p - strides[d]];
                }
                if idx[d] + 1 < self.grid_shape[d] {
                    acc -= coef[d] * x[p + strides[d]];
                }
            }
            *out = acc;
            for (i, &n) in idx.iter_mut().zip(&self.grid_shape) {
                *i += 1;
                if *i < n {
                    break;
                }
                *i = 0;
            }
        }
    }
}

/// Assemble the matrix column by column and diagonalize it densely.
pub fn dense_eigenvalues<A: SymmetricOperator + ?Sized>(op: &A, info: &str) -> Spectrum {
    let n = op.dim();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        m.column_mut(j).copy_from_slice(&col);
    }
    let eig = SymmetricEigen::new(m);
    build(eig.eigenvalues.as_slice().to_vec(), Method::Dense, n, vec![0.0; n], Vec::new(), info.to_string(), None)
}

// ---------------------------------------------------------------------------
// Lanczos

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanczosOptions {
    pub seed: u64,
    /// Krylov dimension per restart cycle; `None` picks
    /// `min(n, max(10k + 50, 400))`.
    pub cycle_len: Option<usize>,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        LanczosOptions {
            seed: 0x5EED,
            cycle_len: None,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // Two passes of classical Gram-Schmidt.
    for _ in 0..2 {
        for v in basis {
            let c = dot(v, w);
            axpy(-c, v, w);
        }
    }
}

struct RitzPair {
    value: f64,
    vector: Vec<f64>,
    estimate: f64,
}

struct Cycle {
    ritz: Vec<RitzPair>,
}

struct LanczosState<'a, A: ?Sized> {
    op: &'a A,
    n: usize,
    tol: f64,
    matvecs: usize,
    budget: usize,
    rng: ChaCha8Rng,
    locked: Vec<Vec<f64>>,
}

impl<A: SymmetricOperator + ?Sized> LanczosState<'_, A> {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        self.matvecs += 1;
        self.op.apply(x, y);
    }

    fn random_start(&mut self) -> Vec<f64> {
        (0..self.n).map(|_| self.rng.random::<f64>() - 0.5).collect()
    }

    /// One Lanczos run with full reorthogonalization against the basis and
    /// the locked vectors. Stops once the `need` smallest Ritz values are
    /// converged, the Krylov space is exhausted, or the budget runs out.
    fn cycle(&mut self, start: Vec<f64>, max_len: usize, need: usize) -> Option<Cycle> {
        let mut q = start;
        orthogonalize(&mut q, &self.locked);
        let qn = norm(&q);
        if qn == 0.0 || !qn.is_finite() {
            return None;
        }
        q.iter_mut().for_each(|x| *x /= qn);

        let mut basis: Vec<Vec<f64>> = vec![q];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; self.n];
        let mut scale = 0.0_f64;
        let mut next_check = 10usize;
        loop {
            let j = basis.len() - 1;
            let qj = basis[j].clone();
            self.apply(&qj, &mut w);
            let a = dot(&qj, &w);
            axpy(-a, &qj, &mut w);
            if j > 0 {
                axpy(-beta[j - 1], &basis[j - 1], &mut w);
            }
            orthogonalize(&mut w, &self.locked);
            orthogonalize(&mut w, &basis);
            let b = norm(&w);
            alpha.push(a);
            scale = scale.max(a.abs()).max(b);
            let breakdown = b <= 1e-12 * scale.max(f64::MIN_POSITIVE);
            let full = basis.len() >= max_len || self.matvecs >= self.budget;

            if breakdown || full || alpha.len() >= next_check {
                next_check = alpha.len() + (alpha.len() / 5).max(10);
                let residual_beta = if breakdown { 0.0 } else { b };
                let (values, vectors) = tridiagonal_eigen(&alpha, &beta);
                let m = alpha.len();
                let converged = (0..need.min(m))
                    .all(|i| (residual_beta * vectors[(m - 1, i)]).abs() <= self.tol);
                if converged || breakdown || full {
                    let take = need.min(m);
                    let ritz = (0..take)
                        .map(|i| {
                            let mut v = vec![0.0; self.n];
                            for (k, bk) in basis.iter().enumerate().take(m) {
                                axpy(vectors[(k, i)], bk, &mut v);
                            }
                            RitzPair {
                                value: values[i],
                                vector: v,
                                estimate: (residual_beta * vectors[(m - 1, i)]).abs(),
                            }
                        })
                        .collect();
                    return Some(Cycle { ritz });
                }
            }
            beta.push(b);
            basis.push(w.iter().map(|x| x / b).collect());
        }
    }

    /// Lock the ascending prefix of converged Ritz pairs; returns how many.
    fn lock_converged(&mut self, cycle: &Cycle, values: &mut Vec<f64>, residuals: &mut Vec<f64>) -> usize {
        let mut count = 0;
        for pair in &cycle.ritz {
            if pair.estimate > self.tol {
                break;
            }
            let r = self.residual(pair.value, &pair.vector);
            if r > self.tol {
                break;
            }
            let mut v = pair.vector.clone();
            orthogonalize(&mut v, &self.locked);
            let vn = norm(&v);
            v.iter_mut().for_each(|x| *x /= vn);
            self.locked.push(v);
            values.push(pair.value);
            residuals.push(r);
            count += 1;
        }
        count
    }

    fn residual(&mut self, value: f64, v: &[f64]) -> f64 {
        let mut av = vec![0.0; self.n];
        self.apply(v, &mut av);
        axpy(-value, v, &mut av);
        norm(&av) / norm(v)
    }
}

/// Eigen-decomposition of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, eigenvalues ascending.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// The `k` smallest eigenvalues of a symmetric operator, each with
/// residual `‖Av - λv‖/‖v‖ ≤ tol`.
///
/// Converged Ritz pairs are locked and later cycles run in their
/// orthogonal complement. Once `k` are locked, a fresh random cycle checks
/// for eigenvalues the earlier Krylov spaces missed (a single start vector
/// sees only one direction of each degenerate eigenspace). `max_iter`
/// bounds the total number of operator applications.
pub fn lanczos_smallest<A: SymmetricOperator + ?Sized>(
    op: &A,
    k: usize,
    tol: f64,
    max_iter: usize,
    opts: LanczosOptions,
    domain_info: &str,
) -> Result<Spectrum, SpectrumError> {
    let n = op.dim();
    if k == 0 || k > n {
        return Err(SpectrumError::InvalidArgument(format!("need 1 <= k <= {n}, got {k}")));
    }
    if !(tol > 0.0) {
        return Err(SpectrumError::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let cycle_len = opts.cycle_len.unwrap_or((10 * k + 50).max(400)).min(n).max(1);
    let mut st = LanczosState {
        op,
        n,
        tol,
        matvecs: 0,
        budget: max_iter,
        rng: ChaCha8Rng::seed_from_u64(opts.seed),
        locked: Vec::new(),
    };
    let mut values: Vec<f64> = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();

    let finish = |values: &[f64], residuals: &[f64], count: usize| {
        let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(residuals.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.truncate(count);
        let (v, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let len = v.len();
        build(v, Method::Lanczos, k, vec![tol; len], r, domain_info.to_string(), Some(opts.seed))
    };
    let fail = |st: &LanczosState<'_, A>, values: &[f64], residuals: &[f64]| SpectrumError::NotConverged {
        requested: k,
        matvecs: st.matvecs,
        converged: Box::new(finish(values, residuals, k)),
    };

    // Fill: lock converged Ritz pairs until k are held.
    let mut restart: Option<Vec<f64>> = None;
    while values.len() < k {
        if st.matvecs >= st.budget || st.locked.len() >= n {
            return Err(fail(&st, &values, &residuals));
        }
        let need = k - values.len();
        let max_len = cycle_len.min(n - st.locked.len());
        let start = restart.take().unwrap_or_else(|| st.random_start());
        let Some(cycle) = st.cycle(start, max_len, need) else {
            continue;
        };
        let locked = st.lock_converged(&cycle, &mut values, &mut residuals);
        if locked == 0 {
            let mut v = vec![0.0; n];
            for p in &cycle.ritz {
                axpy(1.0, &p.vector, &mut v);
            }
            restart = Some(v);
        }
    }

    // Verify: the smallest eigenvalue of the deflated operator must not lie
    // below the current k-th value.
    'verify: while st.locked.len() < n {
        let mut start = st.random_start();
        loop {
            if st.matvecs >= st.budget {
                return Err(fail(&st, &values, &residuals));
            }
            let max_len = cycle_len.min(n - st.locked.len());
            let Some(cycle) = st.cycle(start, max_len, 1) else {
                continue 'verify;
            };
            let kth = {
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                sorted[k - 1]
            };
            if st.lock_converged(&cycle, &mut values, &mut residuals) > 0 {
                if cycle.ritz[0].value < kth - tol {
                    continue 'verify;
                }
                break 'verify;
            }
            start = cycle.ritz[0].vector.clone();
        }
    }
    Ok(finish(&values, &residuals, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn free_1d(n: usize, len: f64) -> MeshOperator {
        discretize(&Curvature::Constant(0.0), &[(0.0, len)], &[n], 1.0, SignConvention::Euclidean).unwrap()
    }

    fn discrete_free(j: usize, n: usize, len: f64, m: f64) -> f64 {
        let h = len / (n + 1) as f64;
        m * (2.0 - 2.0 * (j as f64 * PI * h / len).cos()) / (h * h)
    }

    #[test]
    fn shooting_free_operator() {
        let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
        let s = eigenvalues_shooting(&op, 5, 1e-9).unwrap();
        for (i, v) in s.eigenvalues.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((v - n * n).abs() <= 1e-6, "{v}");
        }
        assert_eq!(s.method, Method::Shooting);
        assert_eq!(s.clusters.len(), 5);
    }

    #[test]
    fn shooting_unit_interval() {
        let op = SlOperator1D::free(1.0, 0.0, 1.0).unwrap();
        let s = eigenvalues_shooting(&op, 1, 1e-9).unwrap();
        assert!((s.eigenvalues[0] - PI * PI).abs() <= 1e-6);
    }

    #[test]
    fn shooting_shifted_by_constant_coefficient() {
        let op = SlOperator1D::harmonic(1.0, 2.0, 0.0, PI, SignConvention::Euclidean).unwrap();
        let s = eigenvalues_shooting(&op, 4, 1e-9).unwrap();
        for (i, v) in s.eigenvalues.iter().enumerate() {
            let n = (i + 1) as f64;
            assert!((v - (n * n + 4.0)).abs() <= 1e-6, "{v}");
        }
    }

    #[test]
    fn shooting_finds_negative_eigenvalues() {
        // Real-time harmonic past the first conjugate time has one negative
        // eigenvalue: (π/T)² - 1.
        let t = 1.5 * PI;
        let op = SlOperator1D::harmonic(1.0, 1.0, 0.0, t, SignConvention::RealTime).unwrap();
        let s = eigenvalues_shooting(&op, 2, 1e-9).unwrap();
        assert!((s.eigenvalues[0] - ((PI / t).powi(2) - 1.0)).abs() < 1e-6);
        assert!(s.eigenvalues[0] < 0.0);
        assert!((s.eigenvalues[1] - ((2.0 * PI / t).powi(2) - 1.0)).abs() < 1e-6);
    }

    #[test]
    fn bracket_exhaustion_reports_progress() {
        let op = SlOperator1D::free(1.0, 0.0, PI).unwrap();
        let opts = ShootingOptions {
            steps: Some(2000),
            max_scan: 4,
        };
        match eigenvalues_shooting_with(&op, 10, 1e-6, opts) {
            Err(SpectrumError::BracketExhausted { found, requested, partial, .. }) => {
                assert!(found < 10);
                assert_eq!(requested, 10);
                assert_eq!(partial.eigenvalues.len(), found);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stencil_of_free_discretization() {
        let n = 7;
        let op = free_1d(n, PI);
        let h = PI / 8.0;
        let mut e = vec![0.0; n];
        e[3] = 1.0;
        let mut y = vec![0.0; n];
        op.apply(&e, &mut y);
        let expected = [0.0, 0.0, -1.0, 2.0, -1.0, 0.0, 0.0];
        for (a, b) in y.iter().zip(expected) {
            assert!((a - b / (h * h)).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_operator_is_symmetric() {
        let curv = Curvature::Expr {
            expr: "x^2 + sin(y)".parse().unwrap(),
            vars: vec!["x".into(), "y".into()],
            params: BTreeMap::new(),
        };
        let op = discretize(&curv, &[(0.0, 1.0), (-1.0, 2.0)], &[9, 7], 1.3, SignConvention::RealTime).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = op.dim();
        for _ in 0..20 {
            let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            let (mut au, mut av) = (vec![0.0; n], vec![0.0; n]);
            op.apply(&u, &mut au);
            op.apply(&v, &mut av);
            let (l, r) = (dot(&au, &v), dot(&u, &av));
            assert!((l - r).abs() <= 1e-10 * l.abs().max(r.abs()));
        }
    }

    #[test]
    fn dense_matches_closed_form() {
        let op = free_1d(50, PI);
        let s = dense_eigenvalues(&op, "free");
        for (j, v) in s.eigenvalues.iter().enumerate() {
            let exact = discrete_free(j + 1, 50, PI, 1.0);
            assert!((v - exact).abs() <= 1e-9 * exact, "{v} vs {exact}");
        }
    }

    #[test]
    fn discretize_rejects_bad_input() {
        assert!(discretize(&Curvature::Constant(0.0), &[(0.0, 1.0)], &[2], 1.0, SignConvention::RealTime).is_err());
        assert!(discretize(&Curvature::Constant(0.0), &[(0.0, 1.0)], &[5, 5], 1.0, SignConvention::RealTime).is_err());
        assert!(discretize(&Curvature::Grid(vec![0.0; 3]), &[(0.0, 1.0)], &[5], 1.0, SignConvention::RealTime).is_err());
        let curv = Curvature::Expr {
            expr: "sqrt(x - 0.5)".parse().unwrap(),
            vars: vec!["x".into()],
            params: BTreeMap::new(),
        };
        assert!(matches!(
            discretize(&curv, &[(0.0, 1.0)], &[9], 1.0, SignConvention::RealTime),
            Err(SpectrumError::Curvature { index: 0, .. })
        ));
    }

    #[test]
    fn lanczos_on_scaled_identity() {
        let op = ScaledIdentity { dim: 30, scale: 2.5 };
        let s = lanczos_smallest(&op, 4, 1e-10, 1000, LanczosOptions::default(), "c I").unwrap();
        assert_eq!(s.eigenvalues.len(), 4);
        assert!(s.eigenvalues.iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert_eq!(s.clusters.len(), 1);
        assert_eq!(s.clusters[0].multiplicity, 4);
        assert!((s.clusters[0].value - 2.5).abs() < 1e-12);
    }

    #[test]
    fn lanczos_small_1d() {
        let op = free_1d(60, 1.0);
        let s = lanczos_smallest(&op, 6, 1e-8, 10_000, LanczosOptions::default(), "free").unwrap();
        for (j, v) in s.eigenvalues.iter().enumerate() {
            assert!((v - discrete_free(j + 1, 60, 1.0, 1.0)).abs() < 1e-8);
        }
        assert!(s.residuals.iter().all(|r| *r <= 1e-8));
        assert_eq!(s.seed, Some(LanczosOptions::default().seed));
    }

    #[test]
    fn lanczos_budget_exhaustion() {
        let op = free_1d(500, 1.0);
        let opts = LanczosOptions {
            seed: 3,
            cycle_len: Some(20),
        };
        match lanczos_smallest(&op, 5, 1e-12, 40, opts, "free") {
            Err(SpectrumError::NotConverged { requested: 5, converged, .. }) => {
                assert!(converged.eigenvalues.len() < 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lanczos_rejects_bad_k() {
        let op = ScaledIdentity { dim: 3, scale: 1.0 };
        assert!(lanczos_smallest(&op, 0, 1e-8, 10, LanczosOptions::default(), "").is_err());
        assert!(lanczos_smallest(&op, 4, 1e-8, 10, LanczosOptions::default(), "").is_err());
    }
}
