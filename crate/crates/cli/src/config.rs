//! Job configuration: the JSON document accepted by `run`, `sweep` and
//! `--config`, and the validation that turns it into library inputs.

use std::collections::BTreeMap;
use std::fmt;

use fundet::expr::{Expr, Parser};
use fundet::gy::SignConvention;
use serde::{Deserialize, Serialize};

use crate::error::JobError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Det,
    Ratio,
    ZetaFit,
    Spectrum,
    ZetaDet,
    Prefactor,
    DiscreteCheck,
    Trajectory,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Det => "det",
            Command::Ratio => "ratio",
            Command::ZetaFit => "zeta-fit",
            Command::Spectrum => "spectrum",
            Command::ZetaDet => "zeta-det",
            Command::Prefactor => "prefactor",
            Command::DiscreteCheck => "discrete-check",
            Command::Trajectory => "trajectory",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A number given either literally or as a constant expression such as
/// `"pi"` or `"2*pi/3"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn resolve(&self, field: &str, params: &BTreeMap<String, f64>) -> Result<f64, JobError> {
        match self {
            Scalar::Number(v) => Ok(*v),
            Scalar::Text(text) => {
                let e = Parser::with_variables(Vec::<String>::new())
                    .parse(text)
                    .map_err(|err| JobError::config(field, format!("not a number or constant expression: {err}"), text.as_str()))?;
                e.evaluate(params).map_err(|err| JobError::config(field, err.to_string(), text.as_str()))
            }
        }
    }
}

impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Number(v)
    }
}

/// `"N@(a,b)"` (N points uniformly inside the open interval) or an
/// explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Points(Vec<f64>),
    Uniform(String),
}

impl GridSpec {
    pub fn resolve(&self, field: &str, params: &BTreeMap<String, f64>) -> Result<Vec<f64>, JobError> {
        match self {
            GridSpec::Points(p) => Ok(p.clone()),
            GridSpec::Uniform(text) => {
                let bad = |why: &str| JobError::config(field, format!("expected N@(a,b): {why}"), text.as_str());
                let (count, range) = text.split_once('@').ok_or_else(|| bad("missing '@'"))?;
                let count: usize = count.trim().parse().map_err(|_| bad("N is not a positive integer"))?;
                if count == 0 {
                    return Err(bad("N must be at least 1"));
                }
                let inner = range
                    .trim()
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| bad("range must be parenthesized"))?;
                let (a, b) = inner.split_once(',').ok_or_else(|| bad("range needs two endpoints"))?;
                let a = Scalar::Text(a.trim().to_string()).resolve(field, params)?;
                let b = Scalar::Text(b.trim().to_string()).resolve(field, params)?;
                if !(b > a) {
                    return Err(bad("empty range"));
                }
                Ok(fundet::zeta::uniform_open_grid(count, a, b))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<Scalar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<[Scalar; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<SignConvention>,
    /// `w(t)` in the variable `t` (or `x, y, z` for meshes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<String>,
    /// `V` in the variables `x, y, z`; the Jacobi operator along the
    /// classical path between `endpoints` is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<String>,
    /// Symbolic differentiation of `potential`. Only `true` is supported;
    /// give `w(t)` as `coefficient` to bypass it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_diff: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoints: Option<Endpoints>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumMethod {
    Shooting,
    Dense,
    Lanczos,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<SpectrumMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_shape: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Vec<[Scalar; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hbar: Option<f64>,
    /// Time slices for `discrete-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Number of computed eigenvalues before the Weyl tail (`zeta-det`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// Explicit finite spectrum for `zeta-det`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobConfig {
    pub command: Command,
    #[serde(default)]
    pub operator: OperatorConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl JobConfig {
    pub fn new(command: Command) -> Self {
        JobConfig {
            command,
            operator: OperatorConfig::default(),
            numerics: NumericsConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Parse one job, reporting the failing field path.
    pub fn from_json(text: &str) -> Result<Self, JobError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            JobError::config(&path, e.into_inner().to_string(), serde_json::Value::Null)
        })
    }

    /// Parse a sweep file: either a JSON array of jobs or `{"jobs": [...]}`.
    pub fn list_from_json(text: &str) -> Result<Vec<Self>, JobError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum SweepFile {
            List(Vec<serde_json::Value>),
            Wrapped { jobs: Vec<serde_json::Value> },
        }
        let file: SweepFile = serde_json::from_str(text)
            .map_err(|e| JobError::config("", format!("expected an array of jobs or {{\"jobs\": [...]}}: {e}"), serde_json::Value::Null))?;
        let (SweepFile::List(values) | SweepFile::Wrapped { jobs: values }) = file;
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                serde_path_to_error::deserialize(v).map_err(|e| {
                    let path = format!("[{i}].{}", e.path());
                    JobError::config(&path, e.into_inner().to_string(), serde_json::Value::Null)
                })
            })
            .collect()
    }
}

/// Parse an expression over the given variable names.
pub(crate) fn parse_expr(field: &str, text: &str, vars: &[&str]) -> Result<Expr, JobError> {
    Parser::with_variables(vars.iter().copied())
        .parse(text)
        .map_err(|e| JobError::config(field, e.to_string(), text))
}
