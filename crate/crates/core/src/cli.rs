//! Batch front end: `hmp <command> --config run.json [--out DIR] [--seed N]`.
//!
//! Exit codes: 0 pass, 1 check failure, 2 usage or configuration error,
//! 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::SolverError;
use crate::hmp::{
    check_trajectory, dv_covector, needle_fd_variation, needle_terminal_variation, random_needles, DvEstimate,
    HmpReport, NeedleSpec, SurfaceChart, ValueSurface,
};
use crate::integrate::csv::{fmt_f64, read_trajectory_csv, write_trajectory_csv};
use crate::integrate::{hybrid_flow, ConstantControl, ControlLaw, FlowOptions, HybridTrajectory};
use crate::model::{instantiate, registry_entries, validate, HybridProblem, ShootingState, TheoremVariant, Vector};
use crate::solver::{
    direct_oracle, solve, value_surface_oracle, OracleOptions, Solution, SolverOptions, SurfaceOptions,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hmp", version, about = "Hybrid maximum principle toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for random restarts and random needles (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate with a fixed control and write the trajectory.
    Simulate,
    /// Solve the necessary conditions by shooting and certify the result.
    Solve,
    /// Re-check a trajectory and costate bundle read from files.
    Check {
        /// Trajectory CSV with costate columns (default: OUT/trajectory.csv).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Switch report with multipliers (default: OUT/switches.json if present).
        #[arg(long)]
        switches: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference needle variations.
    Needle,
    /// Run the direct oracle and, if configured, the value surface.
    Oracle,
    /// List the built-in problems and their parameters.
    Registry,
}

/// Constant control per mode, or one of the registry-provided laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControlChoice {
    Named(String),
    Constant(Vec<Vec<f64>>),
}

impl Default for ControlChoice {
    fn default() -> Self {
        ControlChoice::Named("nominal".into())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub control: ControlChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeedleConfig {
    /// Explicit needle specs, checked before the random ones.
    pub specs: Vec<NeedleSpec>,
    /// Number of seeded random specs.
    pub random: usize,
    /// Trajectory under test: "solution" or a control choice as in `simulate`.
    pub trajectory: ControlChoice,
    pub tolerance: f64,
    pub fd_tolerance: f64,
    pub fd_eps: (f64, f64),
    /// Distance kept between random needle instants and switchings.
    pub margin: f64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        Self {
            specs: Vec::new(),
            random: 200,
            trajectory: ControlChoice::Named("solution".into()),
            tolerance: 1e-6,
            fd_tolerance: 1e-3,
            fd_eps: (1e-3, 1e-4),
            margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl AxisSpec {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.lo];
        }
        (0..self.points).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.points - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceConfig {
    /// State coordinates used as chart parameters.
    pub coords: Vec<usize>,
    /// Add the crossing time as the last chart parameter.
    #[serde(default)]
    pub time: bool,
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub options: SurfaceOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub budget: OracleOptions,
    pub surface: Option<SurfaceConfig>,
}

/// Run configuration read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub variant: Option<TheoremVariant>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub guess: Option<ShootingState>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub needle: NeedleConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Provenance attached to a check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub tool_version: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckArtifact {
    pub report: HmpReport,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchRow {
    pub i: usize,
    pub t_i: f64,
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh_expected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh_measured: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub problem: String,
    pub state: ShootingState,
    pub cost: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub history: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleRow {
    pub t1: f64,
    pub u1: Vec<f64>,
    pub analytic: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub fd_gap: f64,
    pub pairing: f64,
    pub violates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleArtifact {
    pub problem: String,
    pub trajectory: String,
    pub tolerance: f64,
    pub fd_tolerance: f64,
    pub entries: Vec<NeedleRow>,
    pub min_pairing: f64,
    pub max_fd_gap: f64,
    pub violations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleArtifact {
    pub problem: String,
    pub segments: usize,
    pub grid_points: usize,
    pub exhaustive: bool,
    pub evaluations: usize,
    pub cost: f64,
    pub cost_gradient_x0: Vec<f64>,
    pub segment_times: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surface_dv: Option<DvEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indirect_cost_gap: Option<f64>,
}

/// Failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn config(m: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: m.into() }
    }

    fn numerical(m: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERICAL, message: m.into() }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let code = match e {
            SolverError::Inadmissible(_) | SolverError::Budget(_) | SolverError::Model(_) => EXIT_CONFIG,
            _ => EXIT_NUMERICAL,
        };
        let text = e.to_string();
        let message = if text.starts_with(e.class()) { text } else { format!("{}: {text}", e.class()) };
        Self { code, message }
    }
}

type Outcome = Result<i32, Failure>;

struct Context {
    config: RunConfig,
    config_bytes: Vec<u8>,
    problem: HybridProblem,
    out: PathBuf,
    seed: u64,
    verbose: bool,
}

impl Context {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[hmp] {}", msg.as_ref());
        }
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out).map_err(|e| Failure::config(format!("cannot create {}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| Failure::config(format!("cannot write {}: {e}", path.display())))?;
        self.log(format!("wrote {}", path.display()));
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    if let Err(f) = limit_threads() {
        eprintln!("error: {}", f.message);
        return f.code;
    }
    let result = match cli.command {
        Command::Registry => cmd_registry(),
        ref cmd => load_context(&cli).and_then(|ctx| match cmd {
            Command::Simulate => cmd_simulate(&ctx),
            Command::Solve => cmd_solve(&ctx),
            Command::Check { trajectory, switches } => cmd_check(&ctx, trajectory.as_deref(), switches.as_deref()),
            Command::Needle => cmd_needle(&ctx),
            Command::Oracle => cmd_oracle(&ctx),
            Command::Registry => unreachable!(),
        }),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn limit_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("HMP_MAX_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::config(format!("HMP_MAX_THREADS must be a positive integer, got {v:?}")))?;
    // A pool that already exists (repeated calls in one process) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| format!("invalid configuration: {e}"))?;
    let s = &cfg.solver;
    if !s.tolerances.all_positive() {
        return Err("all tolerances must be positive and finite".into());
    }
    if !(s.tol > 0.0) || !(s.fd_step > 0.0) || s.step.is_some_and(|h| !(h > 0.0)) {
        return Err("solver tol, fd_step and step must be positive".into());
    }
    let n = &cfg.needle;
    if !(n.tolerance > 0.0) || !(n.fd_tolerance > 0.0) || !(n.fd_eps.0 > 0.0 && n.fd_eps.1 > 0.0) || n.fd_eps.0 == n.fd_eps.1 {
        return Err("needle tolerances must be positive and the two fd_eps values distinct and positive".into());
    }
    if let Some(surf) = &cfg.oracle.surface {
        if surf.axes.len() != surf.coords.len() + usize::from(surf.time) {
            return Err("surface needs one axis per coordinate (plus one for time)".into());
        }
        if surf.axes.iter().any(|a| a.points == 0 || !(a.lo <= a.hi)) {
            return Err("surface axes need lo <= hi and at least one point".into());
        }
        if !(surf.options.reach_tol > 0.0) || surf.options.weights.iter().any(|w| !(*w > 0.0)) {
            return Err("surface weights and reach_tol must be positive".into());
        }
    }
    Ok(cfg)
}

/// Instantiates and validates the configured problem.
pub fn build_problem(cfg: &RunConfig) -> Result<HybridProblem, String> {
    let mut problem = instantiate(&cfg.problem, &cfg.params).map_err(|e| e.to_string())?;
    if let Some(v) = cfg.variant {
        problem.variant = v;
    }
    let report = validate(&problem);
    if !report.is_clean() {
        return Err(format!("problem validation failed:\n{report}"));
    }
    Ok(problem)
}

fn load_context(cli: &Cli) -> Result<Context, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::config("--config is required"))?;
    let bytes = fs::read(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| Failure::config("configuration is not UTF-8"))?;
    let config = parse_config(&text).map_err(Failure::config)?;
    let problem = build_problem(&config).map_err(Failure::config)?;
    let out = cli.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    Ok(Context { config, config_bytes: bytes, problem, out, seed, verbose: cli.verbose })
}

fn cmd_registry() -> Outcome {
    let mut s = String::new();
    for e in registry_entries() {
        let _ = writeln!(s, "{}{}: {}", e.name, if e.stress { " (stress)" } else { "" }, e.summary);
        for p in e.params {
            let _ = writeln!(s, "    {} = {} in [{}, {}]: {}", p.name, p.default, p.min, p.max, p.doc);
        }
    }
    print!("{s}");
    Ok(EXIT_PASS)
}

fn switch_rows(traj: &HybridTrajectory) -> Vec<SwitchRow> {
    traj.switches
        .iter()
        .map(|s| SwitchRow {
            i: s.index,
            t_i: s.t,
            x_minus: s.x_minus.iter().copied().collect(),
            x_plus: s.x_plus.iter().copied().collect(),
            mu: s.mu,
            dh_expected: s.dh_expected,
            dh_measured: s.dh_measured,
        })
        .collect()
}

fn control_laws(problem: &HybridProblem, choice: &ControlChoice) -> Result<Vec<ConstantControl>, Failure> {
    let values: Vec<Vector> = match choice {
        ControlChoice::Named(name) if name == "nominal" => problem.hints.nominal_control.clone(),
        ControlChoice::Named(name) if name == "suboptimal" => problem
            .hints
            .suboptimal_control
            .clone()
            .ok_or_else(|| Failure::config(format!("{} has no suboptimal control", problem.name)))?,
        ControlChoice::Named(name) => {
            return Err(Failure::config(format!("unknown control {name:?}; use \"nominal\", \"suboptimal\" or values")))
        }
        ControlChoice::Constant(v) => v.iter().map(|u| Vector::from_column_slice(u)).collect(),
    };
    if values.is_empty() {
        return Err(Failure::config("no control values given"));
    }
    for u in &values {
        if !problem.control_set.contains(u, 0.0) {
            return Err(Failure::config(format!("control {:?} outside the control set", u.as_slice())));
        }
    }
    Ok(values.into_iter().map(ConstantControl).collect())
}

fn simulate_with(ctx: &Context, choice: &ControlChoice) -> Result<HybridTrajectory, Failure> {
    let laws = control_laws(&ctx.problem, choice)?;
    let refs: Vec<&dyn ControlLaw> = laws.iter().map(|l| l as &dyn ControlLaw).collect();
    let opts = FlowOptions { step: ctx.config.solver.step, ..Default::default() };
    hybrid_flow(&ctx.problem, &refs, &opts).map_err(|e| Failure::numerical(format!("simulation failed: {e}")))
}

fn cmd_simulate(ctx: &Context) -> Outcome {
    let traj = simulate_with(ctx, &ctx.config.simulate.control)?;
    ctx.write("trajectory.csv", &write_trajectory_csv(&ctx.problem, &traj, None))?;
    ctx.write_json("switches.json", &switch_rows(&traj))?;
    println!("final time {}, final state {:?}, cost {}", traj.final_time(), traj.final_state().as_slice(), traj.cost(&ctx.problem));
    Ok(EXIT_PASS)
}

fn run_solver(ctx: &Context) -> Result<Solution, Failure> {
    let guess = ctx
        .config
        .guess
        .clone()
        .or_else(|| ctx.problem.hints.guess.clone())
        .ok_or_else(|| Failure::config("no initial guess in the configuration or the registry"))?;
    let start = Instant::now();
    let sol = solve(&ctx.problem, &guess, &ctx.config.solver);
    ctx.log(format!("solver finished in {:.3} s", start.elapsed().as_secs_f64()));
    sol.map_err(Failure::from)
}

fn cmd_solve(ctx: &Context) -> Outcome {
    let sol = match run_solver(ctx) {
        Ok(s) => s,
        Err(f) => {
            #[derive(Serialize)]
            struct SolveFailure<'a> {
                problem: &'a str,
                failure: &'a str,
            }
            ctx.write_json("failure.json", &SolveFailure { problem: &ctx.problem.name, failure: &f.message })?;
            return Err(f);
        }
    };
    ctx.write("trajectory.csv", &write_trajectory_csv(&ctx.problem, &sol.trajectory, Some(&sol.adjoint)))?;
    ctx.write_json("switches.json", &switch_rows(&sol.trajectory))?;
    ctx.write_json("report.json", &sol.report)?;
    ctx.write("report.txt", &sol.report.to_string())?;
    let summary = SolutionSummary {
        problem: ctx.problem.name.clone(),
        state: sol.state.clone(),
        cost: sol.cost(&ctx.problem),
        iterations: sol.iterations,
        residual_norm: sol.residual.norm_inf(),
        history: sol.history.clone(),
        pass: sol.report.pass,
    };
    ctx.write_json("solution.json", &summary)?;
    print!("{}", sol.report);
    println!("cost: {}", summary.cost);
    println!("iterations: {}", summary.iterations);
    Ok(if sol.report.pass { EXIT_PASS } else { EXIT_FAIL })
}

fn cmd_check(ctx: &Context, trajectory: Option<&Path>, switches: Option<&Path>) -> Outcome {
    let start = Instant::now();
    let traj_path = trajectory.map(Path::to_path_buf).unwrap_or_else(|| ctx.out.join("trajectory.csv"));
    let text = fs::read_to_string(&traj_path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", traj_path.display())))?;
    let (mut traj, adjoint) = read_trajectory_csv(&ctx.problem, &text)
        .map_err(|e| Failure::config(format!("{}: {e}", traj_path.display())))?;
    let adjoint = adjoint.ok_or_else(|| Failure::config(format!("{} has no costate columns", traj_path.display())))?;
    let default_switches = ctx.out.join("switches.json");
    let sw_path = match switches {
        Some(p) => Some(p.to_path_buf()),
        None => default_switches.exists().then_some(default_switches),
    };
    if let Some(p) = sw_path {
        let text = fs::read_to_string(&p).map_err(|e| Failure::config(format!("cannot read {}: {e}", p.display())))?;
        let rows: Vec<SwitchRow> =
            serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", p.display())))?;
        if rows.len() != traj.switches.len() {
            return Err(Failure::config(format!(
                "{} lists {} switchings, the trajectory has {}",
                p.display(),
                rows.len(),
                traj.switches.len()
            )));
        }
        for (rec, row) in traj.switches.iter_mut().zip(rows) {
            if row.i != rec.index || row.t_i != rec.t {
                return Err(Failure::config(format!("switch {} does not match the trajectory", row.i)));
            }
            rec.mu = row.mu;
        }
    }
    let report = check_trajectory(&ctx.problem, &traj, &adjoint, &ctx.config.solver.tolerances);
    let digest = Sha256::digest(&ctx.config_bytes);
    let config_hash = digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    let artifact = CheckArtifact {
        report,
        provenance: Provenance {
            config_hash,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    };
    ctx.write_json("check.json", &artifact)?;
    print!("{}", artifact.report);
    Ok(if artifact.report.pass { EXIT_PASS } else { EXIT_FAIL })
}

fn cmd_needle(ctx: &Context) -> Outcome {
    let cfg = &ctx.config.needle;
    let problem = &ctx.problem;
    let (traj, label) = match &cfg.trajectory {
        ControlChoice::Named(n) if n == "solution" => (run_solver(ctx)?.trajectory, "solution".to_string()),
        other => (simulate_with(ctx, other)?, format!("{other:?}")),
    };
    for (i, spec) in cfg.specs.iter().enumerate() {
        needle_terminal_variation(problem, &traj, spec).map_err(|e| Failure::config(format!("needle spec {i}: {e}")))?;
    }
    let mut specs = cfg.specs.clone();
    specs.extend(random_needles(problem, &traj, cfg.random, ctx.seed, cfg.margin));
    let dh = problem.terminal_cost.gradient(traj.final_state());
    let mut entries = Vec::with_capacity(specs.len());
    for spec in &specs {
        let v = needle_terminal_variation(problem, &traj, spec).map_err(|e| Failure::numerical(e.to_string()))?;
        let fd = needle_fd_variation(problem, &traj, spec, cfg.fd_eps, ctx.config.solver.step)
            .map_err(|e| Failure::numerical(e.to_string()))?;
        let gap = (&v.comps - &fd).amax() / fd.amax().max(1.0);
        let pairing = dh.dot(&v.comps);
        entries.push(NeedleRow {
            t1: spec.t1,
            u1: spec.u1.clone(),
            analytic: v.comps.iter().copied().collect(),
            finite_difference: fd.iter().copied().collect(),
            fd_gap: gap,
            pairing,
            violates: pairing < -cfg.tolerance,
        });
    }
    let min_pairing = entries.iter().map(|e| e.pairing).fold(f64::INFINITY, f64::min);
    let max_fd_gap = entries.iter().map(|e| e.fd_gap).fold(0.0, f64::max);
    let violations = entries.iter().filter(|e| e.violates).count();
    let pass = violations == 0 && max_fd_gap <= cfg.fd_tolerance;
    let artifact = NeedleArtifact {
        problem: problem.name.clone(),
        trajectory: label,
        tolerance: cfg.tolerance,
        fd_tolerance: cfg.fd_tolerance,
        entries,
        min_pairing,
        max_fd_gap,
        violations,
        pass,
    };
    ctx.write_json("needle.json", &artifact)?;
    println!("needles: {}", artifact.entries.len());
    println!("min_pairing: {min_pairing:e}");
    println!("max_fd_gap: {max_fd_gap:e}");
    println!("violations: {violations}");
    println!("pass: {pass}");
    Ok(if pass { EXIT_PASS } else { EXIT_FAIL })
}

/// Surface samples as CSV: chart parameters, projected state, time, value
/// (empty when unreachable), penalty residual, guard residual, reachable flag.
pub fn surface_csv(surface: &ValueSurface) -> String {
    let k = surface.axes.len();
    let n = surface.samples.first().map_or(0, |s| s.x.len());
    let mut cols: Vec<String> = (1..=k).map(|i| format!("y{i}")).collect();
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend(["t", "value", "residual", "guard_residual", "reachable"].map(String::from));
    let mut s = cols.join(",");
    s.push('\n');
    for smp in &surface.samples {
        let mut row: Vec<String> = smp.params.iter().chain(&smp.x).map(|v| fmt_f64(*v)).collect();
        row.push(fmt_f64(smp.t));
        row.push(smp.value.map(fmt_f64).unwrap_or_default());
        row.push(fmt_f64(smp.residual));
        row.push(fmt_f64(smp.guard_residual));
        row.push(smp.value.is_some().to_string());
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn cmd_oracle(ctx: &Context) -> Outcome {
    let problem = &ctx.problem;
    let mut budget = ctx.config.oracle.budget.clone();
    budget.seed = ctx.seed;
    if budget.step.is_none() {
        budget.step = ctx.config.solver.step;
    }
    let start = Instant::now();
    let oracle = direct_oracle(problem, &budget)?;
    ctx.log(format!("oracle finished in {:.3} s ({} evaluations)", start.elapsed().as_secs_f64(), oracle.evaluations));
    let mut artifact = OracleArtifact {
        problem: problem.name.clone(),
        segments: budget.segments,
        grid_points: budget.grid_points,
        exhaustive: oracle.exhaustive,
        evaluations: oracle.evaluations,
        cost: oracle.cost,
        cost_gradient_x0: oracle.cost_gradient_x0.iter().copied().collect(),
        segment_times: oracle.segment_times.clone(),
        controls: oracle.controls.iter().map(|u| u.iter().copied().collect()).collect(),
        surface_dv: None,
        indirect_cost_gap: None,
    };
    if let Some(sc) = &ctx.config.oracle.surface {
        let sw = oracle
            .trajectory
            .switches
            .get(sc.options.switch)
            .ok_or_else(|| Failure::config(format!("switch {} does not exist", sc.options.switch)))?;
        if sc.coords.iter().any(|&c| c >= problem.state_dim()) {
            return Err(Failure::config("surface coordinate out of range"));
        }
        let chart = SurfaceChart::coordinates(sw.x_minus.clone(), sw.t, sc.coords.clone(), sc.time);
        let axes: Vec<Vec<f64>> = sc.axes.iter().map(AxisSpec::values).collect();
        let surface = value_surface_oracle(problem, &chart, &axes, &oracle, &budget, &sc.options)?;
        ctx.write("surface.csv", &surface_csv(&surface))?;
        let at = chart.params_of(&sw.x_minus, sw.t);
        if surface.reachable_count() < 3 {
            eprintln!("warning: {} reachable surface sample(s); dv check skipped", surface.reachable_count());
        } else {
            match dv_covector(&surface, &at) {
                Ok(d) => {
                    println!("surface tangential gradient at the oracle crossing: {:e}", d.tangential_norm);
                    artifact.surface_dv = Some(d);
                }
                Err(e) => eprintln!("warning: dv check skipped: {e}"),
            }
        }
        if let Some(best) = surface.argmin() {
            println!("surface minimum at {:?}: {}", best.params, best.value.unwrap_or(f64::NAN));
        }
    }
    let solution = ctx.out.join("solution.json");
    if let Ok(text) = fs::read_to_string(&solution) {
        if let Ok(s) = serde_json::from_str::<SolutionSummary>(&text) {
            if s.problem == problem.name {
                let gap = s.cost - oracle.cost;
                println!("indirect - oracle cost: {gap:e}");
                artifact.indirect_cost_gap = Some(gap);
            }
        }
    }
    ctx.write_json("oracle.json", &artifact)?;
    println!("oracle cost: {}", oracle.cost);
    println!("cost gradient wrt x0: {:?}", artifact.cost_gradient_x0);
    Ok(EXIT_PASS)
}
