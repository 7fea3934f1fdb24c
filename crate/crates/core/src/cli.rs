//! Command-line front end. Results are written as JSON; see [`run`].

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Number, Value};
use thiserror::Error;

use crate::continuation::{
    continue_parameter, deflated_search_with, ContinuationError, ContinuationPlan,
    DeflationSettings, McpSystem, OwnedMcpSystem, ProgressEvent, SearchOptions, SolutionSet,
};
use crate::deflation::DeflationError;
use crate::obstacle1d::{self, BeamError, BeamProblem, PathConfig, PathState};
use crate::problems::{self, BenchmarkId, ProblemError};
use crate::reformulate::NcpFunctionKind;
use crate::solver::{LineSearch, SolverConfig};

pub const EXIT_FOUND: i32 = 0;
pub const EXIT_NONE_FOUND: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Deflation(#[from] DeflationError),
    #[error(transparent)]
    Continuation(#[from] ContinuationError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            Self::Problem(_) | Self::Settings(_) => EXIT_USAGE,
            Self::Beam(BeamError::InvalidParameter(_) | BeamError::EmptyMesh) => EXIT_USAGE,
            _ => EXIT_NONE_FOUND,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ssdeflate",
    version,
    about = "Deflated semismooth Newton solvers for complementarity problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the built-in benchmarks.
    List(OutputArgs),
    /// Deflated search for all roots of a benchmark reachable from its initial guess.
    Solve(SolveArgs),
    /// Zero-order continuation of a parameterized benchmark.
    Continue(ContinueArgs),
    /// Obstacle-constrained beam: penalty path-following with deflation.
    Beam(BeamArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NcpArg {
    /// Fischer–Burmeister
    Fb,
    /// min(a, b)
    Mp,
}

impl From<NcpArg> for NcpFunctionKind {
    fn from(v: NcpArg) -> Self {
        match v {
            NcpArg::Fb => Self::FischerBurmeister,
            NcpArg::Mp => Self::MinMax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LineSearchArg {
    None,
    Bt,
    Cubic,
}

impl From<LineSearchArg> for LineSearch {
    fn from(v: LineSearchArg) -> Self {
        match v {
            LineSearchArg::None => Self::None,
            LineSearchArg::Bt => Self::Backtracking,
            LineSearchArg::Cubic => Self::CubicBacktracking,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp so identical runs give identical output.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DeflationArgs {
    /// Deflation power p.
    #[arg(long = "p")]
    pub power: Option<f64>,
    /// Deflation shift σ.
    #[arg(long)]
    pub shift: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Absolute residual tolerance.
    #[arg(long)]
    pub atol: Option<f64>,
    /// Tolerance relative to the initial residual.
    #[arg(long)]
    pub rtol: Option<f64>,
    /// Newton iteration cap per solve.
    #[arg(long)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct McpArgs {
    /// NCP function.
    #[arg(long, value_enum)]
    pub ncp: Option<NcpArg>,
    /// Line search; the bare flag means backtracking.
    #[arg(long, value_enum, num_args = 0..=1, default_missing_value = "bt")]
    pub line_search: Option<LineSearchArg>,
    /// Stop after this many roots.
    #[arg(long)]
    pub max_roots: Option<usize>,
    /// Comma-separated initial guess (defaults to the benchmark's).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub guess: Option<Vec<f64>>,
    #[command(flatten)]
    pub deflation: DeflationArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    /// Benchmark name, see `list`.
    pub benchmark: String,
    /// Problem parameter (parameterized benchmarks only).
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f64>,
    #[command(flatten)]
    pub mcp: McpArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ContinueArgs {
    /// Benchmark name; must be parameterized.
    pub benchmark: String,
    /// Parameter at which the search starts.
    #[arg(long, default_value_t = 1e-3)]
    pub mu_start: f64,
    /// Final parameter value.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    /// Number of equispaced steps.
    #[arg(long, default_value_t = 50)]
    pub mu_steps: usize,
    #[command(flatten)]
    pub mcp: McpArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BeamArgs {
    #[arg(long, default_value_t = 10.0)]
    pub gamma0: f64,
    #[arg(long, default_value_t = 1e6)]
    pub gamma_max: f64,
    /// Ratio between successive penalties; defaults to nine steps.
    #[arg(long)]
    pub q: Option<f64>,
    /// Elements of the initial mesh.
    #[arg(long, default_value_t = 64)]
    pub mesh: usize,
    /// Compressive load P.
    #[arg(long, default_value_t = 10.4)]
    pub load: f64,
    /// Channel half-width.
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// Plain-text columns `x y y'` for each solution.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    #[command(flatten)]
    pub deflation: DeflationArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code: 0 if at least one root was found (or for `list`), 1 if none, 2 on
/// usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return if e.exit_code() == 0 { 0 } else { EXIT_USAGE };
        }
    };
    match execute(&cli.command) {
        Ok((doc, found, output)) => match emit(&doc, output, out) {
            Ok(()) => {
                if found {
                    EXIT_FOUND
                } else {
                    EXIT_NONE_FOUND
                }
            }
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                EXIT_NONE_FOUND
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn emit(doc: &Value, output: &OutputArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut doc = doc.clone();
    if !output.deterministic {
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        if let Value::Object(map) = &mut doc {
            map.insert("timestamp".into(), json!(stamp));
        }
    }
    let mut text = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
    text.push('\n');
    match &output.out {
        Some(path) => write_file(path, &text),
        None => out
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            }),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

type Outcome<'a> = (Value, bool, &'a OutputArgs);

fn execute(command: &Command) -> Result<Outcome<'_>, CliError> {
    match command {
        Command::List(output) => Ok((list(), true, output)),
        Command::Solve(args) => solve(args).map(|(v, found)| (v, found, &args.mcp.output)),
        Command::Continue(args) => {
            continuation(args).map(|(v, found)| (v, found, &args.mcp.output))
        }
        Command::Beam(args) => beam(args).map(|(v, found)| (v, found, &args.output)),
    }
}

fn list() -> Value {
    let benchmarks: Vec<Value> = BenchmarkId::ALL
        .iter()
        .map(|id| {
            json!({
                "name": id.name(),
                "dim": id.dim(),
                "parameterized": id.is_parameterized(),
                "description": id.description(),
            })
        })
        .collect();
    json!({ "benchmarks": benchmarks, "beam": "obstacle-constrained beam, see the `beam` command" })
}

/// Every float becomes a number with 17 significant digits; non-finite
/// values become `null`.
pub fn number(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    let text = format!("{x:.16e}");
    match text.parse::<Number>() {
        Ok(n) => Value::Number(n),
        Err(_) => Value::Null,
    }
}

fn fix_precision(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            *v = n.as_f64().map_or(Value::Null, number);
        }
        Value::Array(items) => items.iter_mut().for_each(fix_precision),
        Value::Object(map) => map.values_mut().for_each(fix_precision),
        _ => {}
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    let mut v = serde_json::to_value(x).expect("plain data serializes");
    fix_precision(&mut v);
    v
}

fn floats(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| number(x)).collect())
}

fn opt_number(x: Option<f64>) -> Value {
    x.map_or(Value::Null, number)
}

fn check_positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Settings(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn check_nonnegative(name: &str, v: f64) -> Result<(), CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Settings(format!(
            "{name} must be nonnegative and finite, got {v}"
        )))
    }
}

struct McpSettings {
    kind: NcpFunctionKind,
    deflation: DeflationSettings,
    config: SolverConfig,
    guess: Vec<f64>,
    max_roots: Option<usize>,
}

impl McpSettings {
    fn resolve(id: BenchmarkId, args: &McpArgs) -> Result<Self, CliError> {
        let rec = id.recommended();
        let mut config = rec.solver_config();
        if let Some(ls) = args.line_search {
            config.line_search = ls.into();
        }
        apply_solver_args(&mut config, &args.solver)?;
        let deflation = deflation_settings(rec.power, rec.shift, &args.deflation)?;
        let guess = args.guess.clone().unwrap_or(rec.initial_guess);
        if guess.len() != id.dim() {
            return Err(CliError::Settings(format!(
                "guess has {} entries, {} needs {}",
                guess.len(),
                id,
                id.dim()
            )));
        }
        if args.max_roots == Some(0) {
            return Err(CliError::Settings("max-roots must be at least 1".into()));
        }
        Ok(Self {
            kind: args.ncp.map_or(rec.ncp, Into::into),
            deflation,
            config,
            guess,
            max_roots: args.max_roots,
        })
    }

    fn to_json(&self) -> Value {
        json!({
            "ncp": self.kind.short_name(),
            "p": number(self.deflation.power),
            "shift": number(self.deflation.shift),
            "line_search": to_value(&self.config.line_search),
            "max_roots": self.max_roots,
            "atol": number(self.config.atol),
            "rtol": number(self.config.rtol),
            "max_iter": self.config.max_iter,
            "singular_regularization": opt_number(self.config.singular_regularization),
            "initial_guess": floats(&self.guess),
        })
    }
}

fn apply_solver_args(config: &mut SolverConfig, args: &SolverArgs) -> Result<(), CliError> {
    if let Some(v) = args.atol {
        check_positive("atol", v)?;
        config.atol = v;
    }
    if let Some(v) = args.rtol {
        check_positive("rtol", v)?;
        config.rtol = v;
    }
    if let Some(v) = args.max_iter {
        config.max_iter = v;
    }
    config
        .validate()
        .map_err(|e| CliError::Settings(e.to_string()))
}

fn deflation_settings(
    power: f64,
    shift: f64,
    args: &DeflationArgs,
) -> Result<DeflationSettings, CliError> {
    let power = args.power.unwrap_or(power);
    let shift = args.shift.unwrap_or(shift);
    check_positive("p", power)?;
    check_nonnegative("shift", shift)?;
    Ok(DeflationSettings::new(power, shift))
}

fn roots_json(set: &SolutionSet) -> Value {
    Value::Array(
        set.records()
            .iter()
            .map(|r| {
                json!({
                    "z": floats(&r.z),
                    "iterations": r.iterations,
                    "residual_norm": number(r.residual_norm),
                    "discovered_at_parameter": opt_number(r.discovered_at_parameter),
                })
            })
            .collect(),
    )
}

fn solve(args: &SolveArgs) -> Result<(Value, bool), CliError> {
    let id: BenchmarkId = args.benchmark.parse()?;
    let problem = problems::build(id, args.mu)?;
    let settings = McpSettings::resolve(id, &args.mcp)?;
    let system = McpSystem::new(&problem, settings.kind);
    let mut events = Vec::new();
    let options = SearchOptions {
        max_roots: settings.max_roots,
        parameter: args.mu,
    };
    let set = deflated_search_with(
        &system,
        std::slice::from_ref(&settings.guess),
        &settings.deflation,
        &settings.config,
        SolutionSet::new(),
        &options,
        &mut |e: &ProgressEvent| events.push(to_value(e)),
    )?;
    let doc = json!({
        "problem": { "name": id.name(), "dim": id.dim(), "mu": opt_number(args.mu) },
        "settings": settings.to_json(),
        "roots": roots_json(&set),
        "events": events,
    });
    Ok((doc, !set.is_empty()))
}

fn continuation(args: &ContinueArgs) -> Result<(Value, bool), CliError> {
    let id: BenchmarkId = args.benchmark.parse()?;
    if !id.is_parameterized() {
        return Err(CliError::Problem(ProblemError::UnexpectedParameter(id)));
    }
    if args.mu_steps == 0 {
        return Err(CliError::Settings("mu-steps must be at least 1".into()));
    }
    if !(args.mu_start.is_finite() && args.mu.is_finite()) {
        return Err(CliError::Settings("parameter range must be finite".into()));
    }
    let settings = McpSettings::resolve(id, &args.mcp)?;
    let plan = ContinuationPlan {
        start: args.mu_start,
        end: args.mu,
        steps: args.mu_steps,
        config: settings.config,
        deflation: settings.deflation.clone(),
    };
    let kind = settings.kind;
    let family = |mu: f64| OwnedMcpSystem {
        problem: problems::build(id, Some(mu))
            .expect("parameterized benchmark accepts a parameter"),
        kind,
    };
    let mut events = Vec::new();
    let mut set = continue_parameter(
        family,
        &plan,
        SolutionSet::new(),
        std::slice::from_ref(&settings.guess),
        &mut |e: &ProgressEvent| events.push(to_value(e)),
    )?;
    if let Some(m) = settings.max_roots {
        let kept: Vec<_> = set.records().iter().take(m).cloned().collect();
        set = SolutionSet::new();
        for r in kept {
            set.insert(r, &settings.deflation.norm);
        }
    }
    let mut s = settings.to_json();
    s["mu_start"] = number(args.mu_start);
    s["mu_steps"] = json!(args.mu_steps);
    let doc = json!({
        "problem": { "name": id.name(), "dim": id.dim(), "mu": number(args.mu) },
        "settings": s,
        "roots": roots_json(&set),
        "events": events,
    });
    Ok((doc, !set.is_empty()))
}

fn beam(args: &BeamArgs) -> Result<(Value, bool), CliError> {
    let problem = BeamProblem {
        p: args.load,
        alpha: args.alpha,
        ..BeamProblem::default()
    };
    let mut config = PathConfig {
        gamma0: args.gamma0,
        gamma_max: args.gamma_max,
        q: args.q,
        initial_elements: args.mesh,
        ..PathConfig::default()
    };
    apply_solver_args(&mut config.solver, &args.solver)?;
    let deflation = deflation_settings(config.power, config.shift, &args.deflation)?;
    config.power = deflation.power;
    config.shift = deflation.shift;
    let mut state = PathState::new(&problem, &config)?;
    let guess = vec![0.0; state.mesh.dofs()];
    let mut events = Vec::new();
    let report = obstacle1d::path_follow(
        &problem,
        &[guess],
        &mut state,
        &config,
        &mut |e: &ProgressEvent| events.push(to_value(e)),
    )?;

    let mesh = &state.mesh;
    let roots: Vec<Value> = state
        .solutions
        .records()
        .iter()
        .map(|r| {
            let nodes: Vec<Value> = (0..=mesh.elements())
                .map(|i| {
                    let x = mesh.node(i);
                    let (y, dy) = mesh.evaluate(&r.z, x);
                    Value::Array(vec![number(x), number(y), number(dy)])
                })
                .collect();
            json!({
                "z": floats(&r.z),
                "iterations": r.iterations,
                "residual_norm": number(r.residual_norm),
                "discovered_at_parameter": opt_number(r.discovered_at_parameter),
                "gamma": number(state.gamma),
                "active_fraction": number(obstacle1d::active_fraction(&problem, mesh, &r.z)),
                "nodes": nodes,
            })
        })
        .collect();
    if let Some(path) = &args.dump {
        write_file(path, &dump_text(&state, &problem))?;
    }
    let doc = json!({
        "problem": {
            "name": "beam",
            "bending_stiffness": number(problem.b),
            "load": number(problem.p),
            "line_density": number(problem.rho),
            "gravity": number(problem.g),
            "length": number(problem.l),
            "alpha": number(problem.alpha),
        },
        "settings": {
            "p": number(config.power),
            "shift": number(config.shift),
            "gamma0": number(config.gamma0),
            "gamma_max": number(config.gamma_max),
            "q": number(config.ratio()),
            "initial_elements": config.initial_elements,
            "final_elements": mesh.elements(),
            "atol": number(config.solver.atol),
            "rtol": number(config.solver.rtol),
            "max_iter": config.solver.max_iter,
        },
        "roots": roots,
        "path": to_value(&report),
        "events": events,
    });
    Ok((doc, !state.solutions.is_empty()))
}

fn dump_text(state: &PathState, problem: &BeamProblem) -> String {
    let mut s = String::new();
    for (k, r) in state.solutions.records().iter().enumerate() {
        s.push_str(&format!(
            "# solution {k} gamma {:.16e} active_fraction {:.16e}\n# x y dy\n",
            state.gamma,
            obstacle1d::active_fraction(problem, &state.mesh, &r.z)
        ));
        for i in 0..=state.mesh.elements() {
            let x = state.mesh.node(i);
            let (y, dy) = state.mesh.evaluate(&r.z, x);
            s.push_str(&format!("{x:.16e} {y:.16e} {dy:.16e}\n"));
        }
        s.push_str("\n\n");
    }
    s
}
