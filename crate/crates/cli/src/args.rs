//! Command-line flags and their merge onto a [`JobConfig`].

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::config::{Command, Endpoints, Format, GridSpec, JobConfig, Scalar, SpectrumMethod};
use crate::error::{JobError, EXIT_CONFIG, EXIT_OK};
use crate::jobs::execute;
use crate::output::{emit, render_list, render_report};
use crate::sweep::run_sweep;

#[derive(Debug, Parser)]
#[command(name = "fundet", version, about = "Functional determinants of Sturm-Liouville operators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Gelfand-Yaglom determinant y(b).
    Det(JobArgs),
    /// det(J + λ²) / det J on one λ or a grid.
    Ratio(JobArgs),
    /// ζ_J(k) from a polynomial fit of log determinant ratios.
    ZetaFit(JobArgs),
    /// Eigenvalues by shooting, dense solve or Lanczos.
    Spectrum(JobArgs),
    /// Zeta-regularized determinant.
    ZetaDet(JobArgs),
    /// Van Vleck prefactor of the semiclassical propagator.
    Prefactor(JobArgs),
    /// Time-sliced fluctuation determinant against Gelfand-Yaglom.
    DiscreteCheck(JobArgs),
    /// Classical path between two points and its action.
    Trajectory(JobArgs),
    /// Run the job described by a config file.
    Run(RunArgs),
    /// Run a list of jobs concurrently.
    Sweep(SweepArgs),
}

fn serde_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_"))).map_err(|e| e.to_string())
}

fn sign_arg(s: &str) -> Result<fundet::gy::SignConvention, String> {
    serde_enum(s)
}

fn method_arg(s: &str) -> Result<SpectrumMethod, String> {
    serde_enum(s)
}

fn format_arg(s: &str) -> Result<Format, String> {
    serde_enum(s)
}

fn param_arg(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or("expected name=value")?;
    let value = value.trim().parse().map_err(|_| format!("{value} is not a number"))?;
    Ok((name.trim().to_string(), value))
}

/// Plain numbers stay numbers in the echoed config.
fn scalar_flag(s: &str) -> Scalar {
    match s.trim().parse::<f64>() {
        Ok(v) => Scalar::Number(v),
        Err(_) => Scalar::Text(s.trim().to_string()),
    }
}

fn range_arg(s: &str) -> Result<[Scalar; 2], String> {
    let (lo, hi) = s.split_once(':').ok_or("expected lo:hi")?;
    Ok([scalar_flag(lo), scalar_flag(hi)])
}

fn grid_arg(s: &str) -> Result<GridSpec, String> {
    if s.contains('@') {
        return Ok(GridSpec::Uniform(s.to_string()));
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("{p} is not a number")))
        .collect::<Result<Vec<_>, _>>()
        .map(GridSpec::Points)
}

/// Flags shared by every computation subcommand. Each one overrides the
/// corresponding field of `--config`.
#[derive(Debug, Default, Args)]
pub struct JobArgs {
    /// JSON job file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Mass m (number or constant expression).
    #[arg(long = "m", alias = "mass", allow_hyphen_values = true)]
    pub mass: Option<String>,
    /// Interval endpoints; `pi` and constant expressions are accepted.
    #[arg(long, num_args = 2, value_names = ["A", "B"], allow_hyphen_values = true)]
    pub interval: Option<Vec<String>>,
    /// real_time (J = -m d² - w) or euclidean (J = -m d² + w).
    #[arg(long, value_parser = sign_arg)]
    pub sign: Option<fundet::gy::SignConvention>,
    /// Coefficient w(t); x, y, z for mesh spectra.
    #[arg(long = "w", alias = "coefficient", allow_hyphen_values = true)]
    pub coefficient: Option<String>,
    /// Potential V(x, y, z); requires --from and --to.
    #[arg(long, allow_hyphen_values = true)]
    pub potential: Option<String>,
    #[arg(long)]
    pub auto_diff: Option<bool>,
    /// Start point of the classical path, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub from: Option<Vec<f64>>,
    /// End point of the classical path, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub to: Option<Vec<f64>>,
    /// Spectral shift λ² added to the operator.
    #[arg(long)]
    pub shift: Option<f64>,
    /// Expression parameter, `name=value`; repeatable.
    #[arg(long = "param", value_parser = param_arg)]
    pub params: Vec<(String, f64)>,

    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "tol", alias = "tolerance")]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `N@(a,b)` or a comma-separated list.
    #[arg(long, value_parser = grid_arg)]
    pub lambda_grid: Option<GridSpec>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    /// shooting, dense or lanczos.
    #[arg(long, value_parser = method_arg)]
    pub method: Option<SpectrumMethod>,
    /// Interior points per dimension, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub grid_shape: Option<Vec<usize>>,
    /// Box side `lo:hi`, once per dimension.
    #[arg(long, value_parser = range_arg, allow_hyphen_values = true)]
    pub domain: Vec<[Scalar; 2]>,
    #[arg(long = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub hbar: Option<f64>,
    /// Time slices for discrete-check.
    #[arg(long = "n")]
    pub n: Option<usize>,
    /// Computed eigenvalues before the Weyl tail in zeta-det.
    #[arg(long)]
    pub cutoff: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Explicit finite spectrum for zeta-det, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub spectrum: Option<Vec<f64>>,

    /// json or csv.
    #[arg(long, value_parser = format_arg)]
    pub format: Option<Format>,
    /// Write the result here instead of stdout.
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = format_arg)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// JSON array of jobs, or `{"jobs": [...]}`.
    #[arg(long)]
    pub config: PathBuf,
    /// Maximum concurrent jobs; defaults to the available cores.
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, value_parser = format_arg)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<String>,
}

fn read_file(path: &Path) -> Result<String, JobError> {
    std::fs::read_to_string(path)
        .map_err(|e| JobError::config("--config", format!("cannot read {}: {e}", path.display()), path.display().to_string()))
}

impl JobArgs {
    /// Build the job for `command` from `--config` (if any) and the flags.
    pub fn to_config(&self, command: Command) -> Result<JobConfig, JobError> {
        let mut cfg = match &self.config {
            Some(path) => JobConfig::from_json(&read_file(path)?)?,
            None => JobConfig::new(command),
        };
        cfg.command = command;
        self.apply(&mut cfg)?;
        Ok(cfg)
    }

    fn apply(&self, cfg: &mut JobConfig) -> Result<(), JobError> {
        let op = &mut cfg.operator;
        if let Some(m) = &self.mass {
            op.mass = Some(scalar_flag(m));
        }
        if let Some(iv) = &self.interval {
            op.interval = Some([scalar_flag(&iv[0]), scalar_flag(&iv[1])]);
        }
        set(&mut op.sign, self.sign);
        set(&mut op.coefficient, self.coefficient.clone());
        set(&mut op.potential, self.potential.clone());
        set(&mut op.auto_diff, self.auto_diff);
        set(&mut op.shift, self.shift);
        match (&self.from, &self.to, &mut op.endpoints) {
            (Some(f), Some(t), ends) => {
                *ends = Some(Endpoints {
                    from: f.clone(),
                    to: t.clone(),
                })
            }
            (Some(f), None, Some(e)) => e.from = f.clone(),
            (None, Some(t), Some(e)) => e.to = t.clone(),
            (None, None, _) => {}
            _ => return Err(JobError::config("--from/--to", "both endpoints are needed", serde_json::Value::Null)),
        }
        for (name, value) in &self.params {
            op.params.insert(name.clone(), *value);
        }

        let n = &mut cfg.numerics;
        set(&mut n.steps, self.steps);
        set(&mut n.tolerance, self.tolerance);
        set(&mut n.lambda, self.lambda);
        set(&mut n.lambda_grid, self.lambda_grid.clone());
        set(&mut n.degree, self.degree);
        set(&mut n.count, self.count);
        set(&mut n.method, self.method);
        set(&mut n.grid_shape, self.grid_shape.clone());
        if !self.domain.is_empty() {
            n.domain = Some(self.domain.clone());
        }
        set(&mut n.k, self.k);
        set(&mut n.max_iter, self.max_iter);
        set(&mut n.seed, self.seed);
        set(&mut n.hbar, self.hbar);
        set(&mut n.n, self.n);
        set(&mut n.cutoff, self.cutoff);
        set(&mut n.tau, self.tau);
        set(&mut n.spectrum, self.spectrum.clone());

        set(&mut cfg.output.format, self.format);
        set(&mut cfg.output.path, self.output.clone());
        Ok(())
    }
}

fn set<T>(slot: &mut T, value: Option<T::Inner>)
where
    T: OptionLike,
{
    if let Some(v) = value {
        slot.put(v);
    }
}

/// Lets [`set`] target both `Option<T>` fields and plain fields.
trait OptionLike {
    type Inner;
    fn put(&mut self, v: Self::Inner);
}

impl<T> OptionLike for Option<T> {
    type Inner = T;
    fn put(&mut self, v: T) {
        *self = Some(v);
    }
}

impl OptionLike for Format {
    type Inner = Format;
    fn put(&mut self, v: Format) {
        *self = v;
    }
}

/// What the process should print and return.
#[derive(Debug, Clone, PartialEq)]
pub struct CliOutcome {
    pub stdout: String,
    pub stderr: String,
    pub code: u8,
}

impl CliOutcome {
    fn failure(e: &JobError) -> Self {
        CliOutcome {
            stdout: crate::output::pretty(&e.to_json()),
            stderr: format!("fundet: {e}\n"),
            code: e.exit_code(),
        }
    }
}

/// Parse `args` (including the program name) and execute. Results with an
/// output path are written to that file; everything else is returned.
pub fn run_cli<I, T>(args: I) -> CliOutcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            return if e.use_stderr() {
                CliOutcome {
                    stdout: String::new(),
                    stderr: text,
                    code,
                }
            } else {
                CliOutcome {
                    stdout: text,
                    stderr: String::new(),
                    code,
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(outcome) => outcome,
        Err(e) => CliOutcome::failure(&e),
    }
}

fn deliver(text: String, path: Option<&str>, code: u8) -> Result<CliOutcome, JobError> {
    let stdout = match path {
        Some(p) => {
            emit(&text, Some(p))?;
            String::new()
        }
        None => text,
    };
    Ok(CliOutcome {
        stdout,
        stderr: String::new(),
        code,
    })
}

fn single(cfg: JobConfig) -> Result<CliOutcome, JobError> {
    let report = execute(&cfg)?;
    let text = render_report(&report, cfg.output.format)?;
    deliver(text, cfg.output.path.as_deref(), EXIT_OK)
}

fn dispatch(command: CliCommand) -> Result<CliOutcome, JobError> {
    let job = |args: JobArgs, c: Command| single(args.to_config(c)?);
    match command {
        CliCommand::Det(a) => job(a, Command::Det),
        CliCommand::Ratio(a) => job(a, Command::Ratio),
        CliCommand::ZetaFit(a) => job(a, Command::ZetaFit),
        CliCommand::Spectrum(a) => job(a, Command::Spectrum),
        CliCommand::ZetaDet(a) => job(a, Command::ZetaDet),
        CliCommand::Prefactor(a) => job(a, Command::Prefactor),
        CliCommand::DiscreteCheck(a) => job(a, Command::DiscreteCheck),
        CliCommand::Trajectory(a) => job(a, Command::Trajectory),
        CliCommand::Run(a) => {
            let mut cfg = JobConfig::from_json(&read_file(&a.config)?)?;
            set(&mut cfg.output.format, a.format);
            set(&mut cfg.output.path, a.output);
            single(cfg)
        }
        CliCommand::Sweep(a) => {
            let jobs = JobConfig::list_from_json(&read_file(&a.config)?)?;
            let parallelism = match a.parallelism {
                Some(0) => return Err(JobError::config("--parallelism", "must be at least 1", 0)),
                Some(p) => p,
                None => std::thread::available_parallelism().map_or(1, |n| n.get()),
            };
            let outcome = run_sweep(&jobs, parallelism);
            let text = render_list(&outcome.entries, a.format.unwrap_or_default())?;
            let mut result = deliver(text, a.output.as_deref(), outcome.exit_code())?;
            if outcome.failures > 0 {
                result.stderr = format!("fundet: {} of {} jobs failed\n", outcome.failures, jobs.len());
            }
            Ok(result)
        }
    }
}
