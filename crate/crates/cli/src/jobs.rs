//! Mapping from a validated [`JobConfig`] to library calls.

use std::collections::BTreeMap;
use std::sync::Arc;

use fundet::gy::{self, Coefficient, Direction, GyError, SignConvention, SlOperator1D};
use fundet::ode::{default_steps, Storage};
use fundet::semiclassical::{self, Potential, SemiclassicalError, Trajectory};
use fundet::spectrum::{self, Curvature, LanczosOptions, SpectrumError};
use fundet::zeta::{self, TailModel, ZetaError};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_expr, Command, JobConfig, SpectrumMethod};
use crate::error::JobError;

const DEFAULT_TOLERANCE: f64 = 1e-10;
const PATH_STEPS: usize = 4000;
const DENSE_LIMIT: usize = 4000;
const COORDINATES: [&str; 3] = ["x", "y", "z"];

/// Everything written for one successful job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub command: Command,
    pub config_echo: JobConfig,
    pub result: Value,
    pub diagnostics: Value,
    pub seed: Option<u64>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("result types serialize to JSON")
}

fn gy_err(e: GyError) -> JobError {
    let value = match &e {
        GyError::ZeroMode { value, .. } => json!(value),
        GyError::Integration(fundet::ode::OdeError::Overflow { t, .. }) => json!(t),
        _ => Value::Null,
    };
    JobError::compute(e.to_string(), value)
}

fn spectrum_err(e: SpectrumError) -> JobError {
    let value = match &e {
        SpectrumError::BracketExhausted { partial, .. } => to_value(&partial.eigenvalues),
        SpectrumError::NotConverged { converged, .. } => to_value(&converged.eigenvalues),
        _ => Value::Null,
    };
    JobError::compute(e.to_string(), value)
}

fn zeta_err(e: ZetaError) -> JobError {
    let value = match &e {
        ZetaError::ConvergenceRadius { lambda_sq_max, .. } => json!(lambda_sq_max),
        ZetaError::RankDeficient { condition } => json!(condition),
        ZetaError::NonPositiveEigenvalue { value, .. } => json!(value),
        ZetaError::DivergentTail(tau) => json!(tau),
        _ => Value::Null,
    };
    JobError::compute(e.to_string(), value)
}

fn semi_err(e: SemiclassicalError) -> JobError {
    let value = match &e {
        SemiclassicalError::ShootingFailed { mismatch, .. } => json!(mismatch),
        SemiclassicalError::ConjugatePoint { det } => json!(det),
        SemiclassicalError::Caustic { value, .. } => json!(value),
        _ => Value::Null,
    };
    JobError::compute(e.to_string(), value)
}

fn positive(field: &str, v: f64) -> Result<f64, JobError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(JobError::config(field, "must be positive and finite", v))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<usize, JobError> {
    if v >= min {
        Ok(v)
    } else {
        Err(JobError::config(field, format!("must be at least {min}"), v))
    }
}

fn require<T: Clone>(field: &str, v: &Option<T>) -> Result<T, JobError> {
    v.clone().ok_or_else(|| JobError::config(field, "is required for this command", Value::Null))
}

/// Operator-independent settings, resolved and validated.
struct Common {
    mass: f64,
    a: f64,
    b: f64,
    sign: SignConvention,
    tolerance: f64,
    params: BTreeMap<String, f64>,
}

impl Common {
    fn steps(&self, cfg: &JobConfig) -> Result<usize, JobError> {
        match cfg.numerics.steps {
            Some(s) => at_least("numerics.steps", s, gy::MIN_STEPS),
            None => Ok(default_steps(self.a, self.b, self.tolerance).max(gy::MIN_STEPS)),
        }
    }
}

fn common(cfg: &JobConfig) -> Result<Common, JobError> {
    let op = &cfg.operator;
    let params = op.params.clone();
    let mass = match &op.mass {
        Some(m) => positive("operator.mass", m.resolve("operator.mass", &params)?)?,
        None => 1.0,
    };
    let [a, b] = require("operator.interval", &op.interval)?;
    let a = a.resolve("operator.interval[0]", &params)?;
    let b = b.resolve("operator.interval[1]", &params)?;
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(JobError::config("operator.interval", "need finite a < b", json!([a, b])));
    }
    let tolerance = positive("numerics.tolerance", cfg.numerics.tolerance.unwrap_or(DEFAULT_TOLERANCE))?;
    Ok(Common {
        mass,
        a,
        b,
        sign: op.sign.unwrap_or_default(),
        tolerance,
        params,
    })
}

/// How the 1D operator was obtained.
struct Built {
    op: SlOperator1D,
    source: &'static str,
}

fn potential(cfg: &JobConfig, c: &Common) -> Result<(Arc<Potential>, usize), JobError> {
    let text = require("operator.potential", &cfg.operator.potential)?;
    if cfg.operator.auto_diff == Some(false) {
        return Err(JobError::config(
            "operator.auto_diff",
            "potentials are always differentiated symbolically; pass w(t) as operator.coefficient instead",
            false,
        ));
    }
    let ends = require("operator.endpoints", &cfg.operator.endpoints)?;
    let d = ends.from.len();
    if !(1..=3).contains(&d) || ends.to.len() != d {
        return Err(JobError::config(
            "operator.endpoints",
            "from and to must have the same dimension, 1 to 3",
            json!([ends.from.len(), ends.to.len()]),
        ));
    }
    let expr = parse_expr("operator.potential", &text, &COORDINATES[..d])?;
    if let Some(p) = expr.parameters().into_iter().find(|p| !c.params.contains_key(p)) {
        return Err(JobError::config("operator.params", format!("parameter {p} is not bound"), p));
    }
    Ok((Arc::new(Potential::new(expr, &COORDINATES[..d], c.params.clone())), d))
}

fn classical_path(cfg: &JobConfig, c: &Common, pot: &Potential, steps: usize) -> Result<Trajectory, JobError> {
    let ends = cfg.operator.endpoints.as_ref().expect("checked by potential()");
    semiclassical::classical_trajectory(pot, c.mass, &ends.from, &ends.to, c.a, c.b, steps, c.tolerance.max(1e-12))
        .map_err(semi_err)
}

fn build_operator(cfg: &JobConfig, c: &Common) -> Result<Built, JobError> {
    let (op, source) = if cfg.operator.potential.is_some() {
        if cfg.operator.coefficient.is_some() {
            return Err(JobError::config(
                "operator",
                "give either coefficient or potential, not both",
                Value::Null,
            ));
        }
        let (pot, d) = potential(cfg, c)?;
        let traj = Arc::new(classical_path(cfg, c, &pot, PATH_STEPS)?);
        if d == 1 {
            let coeff = {
                let traj = Arc::clone(&traj);
                Coefficient::func(move |t| {
                    let z = traj.position_at(t);
                    fundet::gy::HessianSource::hessian(pot.as_ref(), &z).map(|h| h[0]).unwrap_or(f64::NAN)
                })
            };
            (SlOperator1D::new(c.mass, coeff, c.a, c.b, c.sign).map_err(gy_err)?, "jacobi")
        } else {
            let op = gy::project_along_trajectory(pot, traj, Direction::Tangent, c.mass, c.sign).map_err(gy_err)?;
            (op, "tangent_projection")
        }
    } else {
        let text = cfg.operator.coefficient.clone().unwrap_or_else(|| "0".into());
        let expr = parse_expr("operator.coefficient", &text, &["t"])?;
        if let Some(p) = expr.parameters().into_iter().find(|p| !c.params.contains_key(p)) {
            return Err(JobError::config("operator.params", format!("parameter {p} is not bound"), p));
        }
        let coeff = Coefficient::expr(expr, "t", c.params.clone());
        let op = SlOperator1D::new(c.mass, coeff, c.a, c.b, c.sign)
            .map_err(|e| JobError::config("operator.coefficient", e.to_string(), text))?;
        (op, "coefficient")
    };
    let shift = cfg.operator.shift.unwrap_or(0.0);
    let op = if shift != 0.0 {
        op.with_shift(shift)
            .map_err(|e| JobError::config("operator.shift", e.to_string(), shift))?
    } else {
        op
    };
    Ok(Built { op, source })
}

fn operator_diagnostics(built: &Built, c: &Common, steps: usize) -> Value {
    json!({
        "operator_source": built.source,
        "exploratory": built.op.is_exploratory(),
        "mass": c.mass,
        "interval": [c.a, c.b],
        "sign": c.sign,
        "shift": built.op.shift(),
        "steps": steps,
        "zero_mode_threshold": built.op.zero_mode_threshold(),
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

/// Execute one job.
pub fn execute(cfg: &JobConfig) -> Result<Report, JobError> {
    let (result, diagnostics, seed) = match cfg.command {
        Command::Det => det(cfg)?,
        Command::Ratio => ratio(cfg)?,
        Command::ZetaFit => zeta_fit(cfg)?,
        Command::Spectrum => spectrum(cfg)?,
        Command::ZetaDet => zeta_det(cfg)?,
        Command::Prefactor => prefactor(cfg)?,
        Command::DiscreteCheck => discrete_check(cfg)?,
        Command::Trajectory => trajectory(cfg)?,
    };
    Ok(Report {
        command: cfg.command,
        config_echo: cfg.clone(),
        result,
        diagnostics,
        seed,
    })
}

type Outcome = Result<(Value, Value, Option<u64>), JobError>;

fn det(cfg: &JobConfig) -> Outcome {
    let c = common(cfg)?;
    let built = build_operator(cfg, &c)?;
    let steps = c.steps(cfg)?;
    let r = gy::gy_determinant(&built.op, steps, Storage::Full).map_err(gy_err)?;
    let morse = gy::morse_index(&r).map_err(gy_err)?;
    let free_value = c.b - c.a;
    let ratio = r.value / free_value;
    let result = json!({
        "value": r.value,
        "derivative": r.derivative,
        "zero_crossings": r.zero_crossings,
        "morse_index": morse,
        "ratio_to_free": ratio,
        "zeta_determinant": ratio * zeta::free_zeta_det(c.b - c.a, c.mass),
    });
    let diag = merge(
        operator_diagnostics(&built, &c, steps),
        json!({ "free_value": free_value, "normalization": "zeta_determinant = ratio_to_free * 2L/sqrt(m)" }),
    );
    Ok((result, diag, None))
}

fn lambdas(cfg: &JobConfig, c: &Common) -> Result<Vec<f64>, JobError> {
    match (&cfg.numerics.lambda_grid, cfg.numerics.lambda) {
        (Some(g), _) => g.resolve("numerics.lambda_grid", &c.params),
        (None, Some(l)) => Ok(vec![l]),
        (None, None) => Err(JobError::config(
            "numerics.lambda",
            "ratio needs numerics.lambda or numerics.lambda_grid",
            Value::Null,
        )),
    }
}

fn ratio(cfg: &JobConfig) -> Outcome {
    let c = common(cfg)?;
    let built = build_operator(cfg, &c)?;
    let steps = c.steps(cfg)?;
    let grid = lambdas(cfg, &c)?;
    if let Some(&bad) = grid.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(JobError::config("numerics.lambda", "must be nonnegative", bad));
    }
    let ratios = grid
        .iter()
        .map(|&l| gy::gy_ratio(&built.op, l, steps))
        .collect::<Result<Vec<_>, _>>()
        .map_err(gy_err)?;
    Ok((
        json!({ "lambdas": grid, "ratios": ratios }),
        operator_diagnostics(&built, &c, steps),
        None,
    ))
}

fn zeta_fit(cfg: &JobConfig) -> Outcome {
    let c = common(cfg)?;
    let built = build_operator(cfg, &c)?;
    let steps = c.steps(cfg)?;
    let grid = require("numerics.lambda_grid", &cfg.numerics.lambda_grid)?.resolve("numerics.lambda_grid", &c.params)?;
    let degree = at_least("numerics.degree", cfg.numerics.degree.unwrap_or(4), 1)?;
    let (fit, diag) = zeta::zeta_fit_detailed(&built.op, &grid, degree, steps).map_err(|e| match e {
        ZetaError::InvalidArgument(msg) => JobError::config("numerics.lambda_grid", msg, to_value(&grid)),
        other => zeta_err(other),
    })?;
    Ok((
        to_value(&fit),
        merge(operator_diagnostics(&built, &c, steps), to_value(&diag)),
        None,
    ))
}

fn spectrum(cfg: &JobConfig) -> Outcome {
    let n = &cfg.numerics;
    let method = n.method.unwrap_or(if n.grid_shape.is_some() {
        SpectrumMethod::Lanczos
    } else {
        SpectrumMethod::Shooting
    });
    if method == SpectrumMethod::Shooting {
        let c = common(cfg)?;
        let built = build_operator(cfg, &c)?;
        let count = at_least("numerics.count", n.count.unwrap_or(5), 1)?;
        let s = spectrum::eigenvalues_shooting(&built.op, count, c.tolerance).map_err(spectrum_err)?;
        let mut diag = operator_diagnostics(&built, &c, 0);
        if let Value::Object(m) = &mut diag {
            m.remove("steps");
        }
        return Ok((to_value(&s), diag, None));
    }

    let c = common(cfg)?;
    let shape = require("numerics.grid_shape", &n.grid_shape)?;
    if !(1..=3).contains(&shape.len()) || shape.iter().any(|&p| p < 3) {
        return Err(JobError::config(
            "numerics.grid_shape",
            "1 to 3 dimensions with at least 3 points each",
            to_value(&shape),
        ));
    }
    let domain = match &n.domain {
        Some(d) => d
            .iter()
            .enumerate()
            .map(|(i, [lo, hi])| {
                let field = format!("numerics.domain[{i}]");
                Ok((lo.resolve(&field, &c.params)?, hi.resolve(&field, &c.params)?))
            })
            .collect::<Result<Vec<_>, JobError>>()?,
        None => vec![(c.a, c.b); shape.len()],
    };
    let vars = &COORDINATES[..shape.len()];
    let curvature = match &cfg.operator.coefficient {
        Some(text) => Curvature::Expr {
            expr: parse_expr("operator.coefficient", text, vars)?,
            vars: vars.iter().map(|v| v.to_string()).collect(),
            params: c.params.clone(),
        },
        None => Curvature::Constant(0.0),
    };
    let mesh = spectrum::discretize(&curvature, &domain, &shape, c.mass, c.sign).map_err(|e| match e {
        SpectrumError::InvalidArgument(msg) => JobError::config("numerics", msg, Value::Null),
        other => spectrum_err(other),
    })?;
    let total: usize = shape.iter().product();
    let mesh_diag = json!({ "grid_shape": shape, "spacing": mesh.spacing, "unknowns": total, "mass": c.mass, "sign": c.sign });
    match method {
        SpectrumMethod::Dense => {
            if total > DENSE_LIMIT {
                return Err(JobError::config(
                    "numerics.method",
                    format!("dense solves are limited to {DENSE_LIMIT} unknowns"),
                    total,
                ));
            }
            let mut s = spectrum::dense_eigenvalues(&mesh, &mesh.describe());
            if let Some(count) = n.count.or(n.k) {
                s.eigenvalues.truncate(count);
                s.count_requested = count;
                s.residual_tolerances.truncate(count);
                s.clusters = fundet::spectrum::Spectrum::from_values(s.eigenvalues.clone(), "").clusters;
            }
            Ok((to_value(&s), mesh_diag, None))
        }
        _ => {
            let k = at_least("numerics.k", n.k.or(n.count).unwrap_or(5), 1)?;
            if k > total {
                return Err(JobError::config("numerics.k", format!("exceeds the {total} unknowns"), k));
            }
            let tol = positive("numerics.tolerance", n.tolerance.unwrap_or(1e-8))?;
            let opts = LanczosOptions {
                seed: n.seed.unwrap_or(LanczosOptions::default().seed),
                ..LanczosOptions::default()
            };
            let budget = n.max_iter.unwrap_or(200_000);
            let s = spectrum::lanczos_smallest(&mesh, k, tol, budget, opts, &mesh.describe()).map_err(spectrum_err)?;
            Ok((to_value(&s), merge(mesh_diag, json!({ "max_iter": budget })), Some(opts.seed)))
        }
    }
}

fn zeta_det(cfg: &JobConfig) -> Outcome {
    let n = &cfg.numerics;
    if let Some(values) = &n.spectrum {
        if values.is_empty() {
            return Err(JobError::config("numerics.spectrum", "must not be empty", Value::Null));
        }
        let s = fundet::spectrum::Spectrum::from_values(values.clone(), "explicit finite spectrum");
        let det = zeta::zeta_det(&s, None).map_err(zeta_err)?;
        let mut result = json!({ "zeta_determinant": det, "eigenvalues": s.eigenvalues });
        if let Some(tau) = n.tau {
            let z = zeta::zeta_truncated(&s, tau, None).map_err(zeta_err)?;
            result["zeta"] = json!({ "tau": tau, "value": z.value, "error_estimate": z.error_estimate });
        }
        return Ok((result, json!({ "tail": null }), None));
    }

    let c = common(cfg)?;
    let built = build_operator(cfg, &c)?;
    let steps = c.steps(cfg)?;
    let cutoff = at_least("numerics.cutoff", n.cutoff.unwrap_or(50), 1)?;
    let s = spectrum::eigenvalues_shooting(&built.op, cutoff, c.tolerance).map_err(spectrum_err)?;
    let tail = TailModel::for_operator(&built.op, cutoff).map_err(zeta_err)?;
    let det = zeta::zeta_det(&s, Some(&tail)).map_err(zeta_err)?;
    let free = zeta::free_zeta_det(c.b - c.a, c.mass);
    let gy_value = gy::gy_determinant(&built.op, steps, Storage::BoundaryOnly).map_err(gy_err)?.value;
    let mut result = json!({
        "zeta_determinant": det,
        "free_zeta_determinant": free,
        "zeta_ratio_to_free": det / free,
        "gy_value": gy_value,
        "gy_ratio_to_free": gy_value / (c.b - c.a),
    });
    if let Some(tau) = n.tau {
        let z = zeta::zeta_truncated(&s, tau, Some(&tail)).map_err(zeta_err)?;
        result["zeta"] = json!({ "tau": tau, "value": z.value, "error_estimate": z.error_estimate });
    }
    let diag = merge(
        operator_diagnostics(&built, &c, steps),
        json!({ "tail": tail, "lowest_eigenvalues": &s.eigenvalues[..s.len().min(5)] }),
    );
    Ok((result, diag, None))
}

fn hbar(cfg: &JobConfig) -> Result<f64, JobError> {
    positive("numerics.hbar", cfg.numerics.hbar.unwrap_or(1.0))
}

fn prefactor(cfg: &JobConfig) -> Outcome {
    let c = common(cfg)?;
    let hbar = hbar(cfg)?;
    let steps = c.steps(cfg)?;
    if cfg.operator.potential.is_some() && cfg.operator.coefficient.is_none() {
        let (pot, d) = potential(cfg, &c)?;
        if d != 1 {
            return Err(JobError::config(
                "operator.endpoints",
                "the propagator prefactor is one-dimensional",
                d,
            ));
        }
        let ends = cfg.operator.endpoints.as_ref().expect("checked by potential()");
        let est = semiclassical::propagator_estimate(
            &pot,
            c.mass,
            ends.from[0],
            ends.to[0],
            c.a,
            c.b,
            hbar,
            steps.min(100_000),
            c.tolerance.max(1e-12),
        )
        .map_err(semi_err)?;
        return Ok((to_value(&est), json!({ "steps": steps, "operator_source": "jacobi" }), None));
    }
    let built = build_operator(cfg, &c)?;
    let p = semiclassical::fluctuation_prefactor(&built.op, hbar, steps).map_err(semi_err)?;
    Ok((to_value(&p), operator_diagnostics(&built, &c, steps), None))
}

fn discrete_check(cfg: &JobConfig) -> Outcome {
    let c = common(cfg)?;
    let built = build_operator(cfg, &c)?;
    let steps = c.steps(cfg)?;
    let n = at_least("numerics.n", cfg.numerics.n.unwrap_or(1000), 2)?;
    let exact = gy::gy_determinant(&built.op, steps, Storage::BoundaryOnly).map_err(gy_err)?.value;
    let d1 = semiclassical::discrete_fluctuation_det(&built.op, n).map_err(semi_err)?;
    let d2 = semiclassical::discrete_fluctuation_det(&built.op, 2 * n).map_err(semi_err)?;
    let (e1, e2) = ((d1 - exact).abs(), (d2 - exact).abs());
    let order = if e1 > 0.0 && e2 > 0.0 { Some((e1 / e2).log2()) } else { None };
    Ok((
        json!({
            "n": n,
            "discrete": d1,
            "gelfand_yaglom": exact,
            "abs_error": e1,
            "discrete_2n": d2,
            "abs_error_2n": e2,
            "observed_order": order,
        }),
        operator_diagnostics(&built, &c, steps),
        None,
    ))
}

fn trajectory(cfg: &JobConfig) -> Outcome {
    let c = common(cfg)?;
    let (pot, _) = potential(cfg, &c)?;
    let steps = at_least("numerics.steps", cfg.numerics.steps.unwrap_or(1000), 1)?;
    let traj = classical_path(cfg, &c, &pot, steps)?;
    let s = semiclassical::action(&traj, &pot, c.mass).map_err(semi_err)?;
    Ok((
        json!({ "action": s, "trajectory": traj }),
        json!({ "steps": steps, "mass": c.mass, "tolerance": c.tolerance.max(1e-12) }),
        None,
    ))
}
