//! Declarative hybrid optimal control problems in Mayer form.
//!
//! A problem is an ordered sequence of modes `q0 -> q1 -> ... -> qL`. Guard `i`
//! triggers the transition out of mode `i` and jump `i` resets the state when
//! it fires. The objective is a terminal cost only.

mod registry;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{ChartId, ChartPoint, MetricField};

pub use registry::{instantiate, registry_entries, ParamSpec, RegistryEntry};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

type FieldFn = dyn Fn(&Vector, &Vector, f64) -> Vector + Send + Sync;
type FieldJacFn = dyn Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync;
type ScalarFn = dyn Fn(&Vector, f64) -> f64 + Send + Sync;
type GradFn = dyn Fn(&Vector, f64) -> (Vector, f64) + Send + Sync;
type MapFn = dyn Fn(&Vector, f64) -> Vector + Send + Sync;
type MapJacFn = dyn Fn(&Vector, f64) -> Matrix + Send + Sync;
type CostFn = dyn Fn(&Vector) -> f64 + Send + Sync;
type CostGradFn = dyn Fn(&Vector) -> Vector + Send + Sync;

/// Relative finite-difference step used for every fallback derivative.
pub const FD_REL_STEP: f64 = 1e-6;

fn fd_step(x: &Vector) -> f64 {
    FD_REL_STEP * (1.0 + x.norm())
}

/// Central-difference Jacobian of a vector map.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector) -> Matrix {
    let h = fd_step(x);
    let f0 = f(x);
    let mut jac = Matrix::zeros(f0.len(), x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        jac.set_column(j, &((fp - fm) / (2.0 * h)));
    }
    jac
}

/// Central-difference gradient of a scalar map.
pub fn fd_gradient(f: impl Fn(&Vector) -> f64, x: &Vector) -> Vector {
    let h = fd_step(x);
    let mut g = Vector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        g[j] = (fp - fm) / (2.0 * h);
    }
    g
}

fn fd_time(f: impl Fn(f64) -> Vector, t: f64) -> Vector {
    let h = FD_REL_STEP * (1.0 + t.abs());
    (f(t + h) - f(t - h)) / (2.0 * h)
}

/// One discrete location `q` with its controlled vector field `f_q(x, u, t)`.
#[derive(Clone)]
pub struct Mode {
    pub id: String,
    field: Arc<FieldFn>,
    jacobian: Option<Arc<FieldJacFn>>,
    autonomous: bool,
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mode")
            .field("id", &self.id)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("autonomous", &self.autonomous)
            .finish()
    }
}

impl Mode {
    pub fn new<F>(id: impl Into<String>, field: F) -> Self
    where
        F: Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
    {
        Self { id: id.into(), field: Arc::new(field), jacobian: None, autonomous: true }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, &Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Marks the field as explicitly time dependent.
    pub fn time_dependent(mut self) -> Self {
        self.autonomous = false;
        self
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn eval(&self, x: &Vector, u: &Vector, t: f64) -> Vector {
        (self.field)(x, u, t)
    }

    /// `df/dx`, analytic when registered, central differences otherwise.
    pub fn jacobian_x(&self, x: &Vector, u: &Vector, t: f64) -> Matrix {
        match &self.jacobian {
            Some(j) => j(x, u, t),
            None => self.jacobian_x_fd(x, u, t),
        }
    }

    pub fn jacobian_x_fd(&self, x: &Vector, u: &Vector, t: f64) -> Matrix {
        fd_jacobian(|y| self.eval(y, u, t), x)
    }
}

/// Box of admissible control values.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub lower: Vector,
    pub upper: Vector,
}

impl ControlSet {
    pub fn new(lower: Vector, upper: Vector) -> Self {
        Self { lower, upper }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(Vector::from_element(1, lo), Vector::from_element(1, hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_well_formed(&self) -> bool {
        self.lower.len() == self.upper.len()
            && !self.lower.is_empty()
            && self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
            && self.lower.iter().zip(self.upper.iter()).all(|(l, u)| l <= u)
    }

    pub fn clamp(&self, u: &Vector) -> Vector {
        Vector::from_iterator(
            u.len(),
            u.iter().enumerate().map(|(i, v)| v.clamp(self.lower[i], self.upper[i])),
        )
    }

    pub fn contains(&self, u: &Vector, tol: f64) -> bool {
        u.len() == self.dim()
            && u.iter().enumerate().all(|(i, v)| *v >= self.lower[i] - tol && *v <= self.upper[i] + tol)
    }

    pub fn center(&self) -> Vector {
        (&self.lower + &self.upper) * 0.5
    }

    /// Evenly spaced grid values of coordinate `i` (`g >= 2` points).
    pub fn axis_grid(&self, i: usize, g: usize) -> Vec<f64> {
        let (lo, hi) = (self.lower[i], self.upper[i]);
        if g <= 1 || hi == lo {
            return vec![lo];
        }
        (0..g).map(|k| lo + (hi - lo) * k as f64 / (g - 1) as f64).collect()
    }
}

/// Scalar switching function `gamma(x, t)`; the switching manifold is its zero set.
#[derive(Clone)]
pub struct Guard {
    value: Arc<ScalarFn>,
    grad: Option<Arc<GradFn>>,
    time_varying: bool,
}

impl fmt::Debug for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Guard").field("time_varying", &self.time_varying).finish()
    }
}

impl Guard {
    pub fn new<F>(value: F, time_varying: bool) -> Self
    where
        F: Fn(&Vector, f64) -> f64 + Send + Sync + 'static,
    {
        Self { value: Arc::new(value), grad: None, time_varying }
    }

    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&Vector, f64) -> (Vector, f64) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn is_time_varying(&self) -> bool {
        self.time_varying
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn value(&self, x: &Vector, t: f64) -> f64 {
        (self.value)(x, t)
    }

    /// `(d gamma / dx, d gamma / dt)`. The time part is exactly zero for
    /// time-invariant guards.
    pub fn gradient(&self, x: &Vector, t: f64) -> (Vector, f64) {
        let (gx, gt) = match &self.grad {
            Some(g) => g(x, t),
            None => self.gradient_fd(x, t),
        };
        if self.time_varying {
            (gx, gt)
        } else {
            (gx, 0.0)
        }
    }

    pub fn gradient_fd(&self, x: &Vector, t: f64) -> (Vector, f64) {
        let gx = fd_gradient(|y| self.value(y, t), x);
        let gt = fd_time(|s| Vector::from_element(1, self.value(x, s)), t)[0];
        (gx, gt)
    }
}

/// Impulsive reset `zeta(x, t)` applied at a switching instant.
#[derive(Clone)]
pub struct Jump {
    map: Arc<MapFn>,
    jacobian: Option<Arc<MapJacFn>>,
    d_t: Option<Arc<MapFn>>,
    time_varying: bool,
}

impl fmt::Debug for Jump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jump").field("time_varying", &self.time_varying).finish()
    }
}

impl Jump {
    pub fn new<F>(map: F, time_varying: bool) -> Self
    where
        F: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        Self { map: Arc::new(map), jacobian: None, d_t: None, time_varying }
    }

    pub fn identity() -> Self {
        Self::new(|x, _| x.clone(), false).with_jacobian(|x, _| Matrix::identity(x.len(), x.len()))
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&Vector, f64) -> Matrix + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_time_derivative<D>(mut self, d_t: D) -> Self
    where
        D: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        self.d_t = Some(Arc::new(d_t));
        self
    }

    pub fn is_time_varying(&self) -> bool {
        self.time_varying
    }

    pub fn apply(&self, x: &Vector, t: f64) -> Vector {
        (self.map)(x, t)
    }

    /// `D zeta` with respect to the state.
    pub fn jacobian_x(&self, x: &Vector, t: f64) -> Matrix {
        match &self.jacobian {
            Some(j) => j(x, t),
            None => self.jacobian_x_fd(x, t),
        }
    }

    pub fn jacobian_x_fd(&self, x: &Vector, t: f64) -> Matrix {
        fd_jacobian(|y| self.apply(y, t), x)
    }

    /// `D_t zeta`, identically zero for time-invariant jumps.
    pub fn d_t(&self, x: &Vector, t: f64) -> Vector {
        if !self.time_varying {
            return Vector::zeros(x.len());
        }
        match &self.d_t {
            Some(d) => d(x, t),
            None => self.d_t_fd(x, t),
        }
    }

    pub fn d_t_fd(&self, x: &Vector, t: f64) -> Vector {
        fd_time(|s| self.apply(x, s), t)
    }

    pub(crate) fn has_analytic_parts(&self) -> (bool, bool) {
        (self.jacobian.is_some(), self.d_t.is_some())
    }
}

/// Terminal cost `h` with optional registered gradient `dh`.
#[derive(Clone)]
pub struct TerminalCost {
    value: Arc<CostFn>,
    grad: Option<Arc<CostGradFn>>,
}

impl fmt::Debug for TerminalCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalCost").field("analytic_gradient", &self.grad.is_some()).finish()
    }
}

impl TerminalCost {
    pub fn new<F>(value: F) -> Self
    where
        F: Fn(&Vector) -> f64 + Send + Sync + 'static,
    {
        Self { value: Arc::new(value), grad: None }
    }

    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&Vector) -> Vector + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn value(&self, x: &Vector) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match &self.grad {
            Some(g) => g(x),
            None => fd_gradient(|y| self.value(y), x),
        }
    }

    pub fn gradient_fd(&self, x: &Vector) -> Vector {
        fd_gradient(|y| self.value(y), x)
    }
}

/// Which form of the necessary conditions applies at the switchings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremVariant {
    /// Time-invariant guards and jumps: the Hamiltonian is continuous.
    TimeInvariant,
    /// Value function differentiable at the switching state; its differential
    /// replaces the guard normal in the costate jump.
    InteriorOptimal,
    /// Time-varying switching manifold.
    TimeVaryingGuard,
    /// Time-varying jump map.
    TimeVaryingJump,
    /// Time-varying manifold and time-varying jump.
    Combined,
}

impl TheoremVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            TheoremVariant::TimeInvariant => "TimeInvariant",
            TheoremVariant::InteriorOptimal => "InteriorOptimal",
            TheoremVariant::TimeVaryingGuard => "TimeVaryingGuard",
            TheoremVariant::TimeVaryingJump => "TimeVaryingJump",
            TheoremVariant::Combined => "Combined",
        }
    }

    /// Whether the time part of the jump covector enters the jump conditions.
    pub fn uses_guard_time(&self) -> bool {
        matches!(self, TheoremVariant::TimeVaryingGuard | TheoremVariant::TimeVaryingJump | TheoremVariant::Combined)
    }

    /// Whether the pairing `D*_t zeta (p)` enters the jump conditions.
    pub fn uses_jump_time(&self) -> bool {
        matches!(self, TheoremVariant::TimeVaryingJump | TheoremVariant::Combined)
    }
}

impl fmt::Display for TheoremVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Unknowns of the indirect boundary-value problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShootingState {
    pub p0: Vec<f64>,
    pub switch_times: Vec<f64>,
    pub mus: Vec<f64>,
}

impl ShootingState {
    pub fn new(p0: Vec<f64>, switch_times: Vec<f64>, mus: Vec<f64>) -> Self {
        Self { p0, switch_times, mus }
    }

    pub fn len(&self) -> usize {
        self.p0.len() + self.switch_times.len() + self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(
            self.len(),
            self.p0.iter().chain(self.switch_times.iter()).chain(self.mus.iter()).copied(),
        )
    }

    /// Inverse of [`ShootingState::to_vector`]. With `with_mus == false` the
    /// multipliers are taken from `template`.
    pub fn from_vector(z: &Vector, n: usize, l: usize, with_mus: bool, template: &ShootingState) -> Self {
        let p0 = z.rows(0, n).iter().copied().collect();
        let switch_times = z.rows(n, l).iter().copied().collect();
        let mus = if with_mus { z.rows(n + l, l).iter().copied().collect() } else { template.mus.clone() };
        Self { p0, switch_times, mus }
    }
}

/// Auxiliary data a registry entry supplies alongside the problem.
#[derive(Debug, Clone, Default)]
pub struct ProblemHints {
    /// Documented starting point for the shooting solver.
    pub guess: Option<ShootingState>,
    /// Constant control per mode used by `simulate` when none is configured.
    pub nominal_control: Vec<Vector>,
    /// Constant control per mode that is known to be suboptimal.
    pub suboptimal_control: Option<Vec<Vector>>,
    /// Box `[lo, hi]` used for smoothness probes.
    pub state_box: Option<(Vector, Vector)>,
}

/// A complete impulsive hybrid optimal control problem.
#[derive(Debug, Clone)]
pub struct HybridProblem {
    pub name: String,
    pub chart: ChartId,
    pub modes: Vec<Mode>,
    pub guards: Vec<Guard>,
    pub jumps: Vec<Jump>,
    pub control_set: ControlSet,
    pub terminal_cost: TerminalCost,
    pub x0: Vector,
    pub t0: f64,
    pub tf: f64,
    pub metric: MetricField,
    pub variant: TheoremVariant,
    pub normalize_normals: bool,
    pub hints: ProblemHints,
}

impl HybridProblem {
    pub fn state_dim(&self) -> usize {
        self.x0.len()
    }

    pub fn control_dim(&self) -> usize {
        self.control_set.dim()
    }

    pub fn num_switches(&self) -> usize {
        self.modes.len().saturating_sub(1)
    }

    pub fn point(&self, coords: Vector) -> ChartPoint {
        ChartPoint::new(self.chart, coords)
    }

    pub fn horizon(&self) -> f64 {
        self.tf - self.t0
    }

    /// Default integration step, `1e-3` of the horizon.
    pub fn default_step(&self) -> f64 {
        1e-3 * self.horizon()
    }

    fn probe_box(&self) -> (Vector, Vector) {
        match &self.hints.state_box {
            Some(b) => b.clone(),
            None => {
                let r = 1.0 + self.x0.amax();
                (self.x0.add_scalar(-r), self.x0.add_scalar(r))
            }
        }
    }

    /// Deterministic sample points in the probe box.
    pub fn sample_states(&self, count: usize, seed: u64) -> Vec<(Vector, Vector, f64)> {
        let (lo, hi) = self.probe_box();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cs = &self.control_set;
        (0..count)
            .map(|_| {
                let x = Vector::from_iterator(lo.len(), (0..lo.len()).map(|i| rng.gen_range(lo[i]..=hi[i])));
                let u = Vector::from_iterator(cs.dim(), (0..cs.dim()).map(|i| rng.gen_range(cs.lower[i]..=cs.upper[i])));
                let t = rng.gen_range(self.t0..=self.tf);
                (x, u, t)
            })
            .collect()
    }
}

/// One failed check reported by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: &'static str, message: impl Into<String>) {
        self.violations.push(Violation { code, message: message.into() });
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}: {}", v.code, v.message)?;
        }
        Ok(())
    }
}

/// Relative agreement `|a - b|_inf <= tol * max(1, |b|_inf)`.
pub fn agrees(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.shape() == b.shape() && (a - b).amax() <= tol * b.amax().max(1.0)
}

const PROBE_COUNT: usize = 20;
const JAC_TOL: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-6;

/// Structural, smoothness and variant-consistency checks.
pub fn validate(problem: &HybridProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = problem.state_dim();
    let l = problem.num_switches();

    if problem.modes.is_empty() {
        report.push("no-modes", "problem has no modes");
        return report;
    }
    if problem.guards.len() != l {
        report.push(
            "guard-count",
            format!("guard/mode count mismatch: {} guards for {} modes", problem.guards.len(), problem.modes.len()),
        );
    }
    if problem.jumps.len() != l {
        report.push(
            "jump-count",
            format!("jump/mode count mismatch: {} jumps for {} modes", problem.jumps.len(), problem.modes.len()),
        );
    }
    if !(problem.t0.is_finite() && problem.tf.is_finite() && problem.t0 < problem.tf) {
        report.push("horizon", format!("horizon must satisfy t0 < tf, got [{}, {}]", problem.t0, problem.tf));
    }
    if n == 0 || !problem.x0.iter().all(|v| v.is_finite()) {
        report.push("initial-state", "initial state must be finite with dimension >= 1");
    }
    if !problem.control_set.is_well_formed() {
        report.push("control-set", "control bounds must be finite with lower <= upper");
    }
    if !report.is_clean() {
        return report;
    }

    let samples = problem.sample_states(PROBE_COUNT, 0x5eed);
    let mut probe_points: Vec<(Vector, Vector, f64)> = vec![(problem.x0.clone(), problem.control_set.center(), problem.t0)];
    probe_points.extend(samples);

    for (x, _, _) in &probe_points {
        if let Err(e) = problem.metric.eval(&problem.point(x.clone())) {
            report.push("metric", format!("metric invalid: {e}"));
            break;
        }
    }

    for (qi, mode) in problem.modes.iter().enumerate() {
        for (x, u, t) in &probe_points {
            let f = mode.eval(x, u, *t);
            if f.len() != n || !f.iter().all(|v| v.is_finite()) {
                report.push("dynamics", format!("mode {} ({}) returns an invalid field at {:?}", qi, mode.id, x.as_slice()));
                break;
            }
            if mode.has_analytic_jacobian() && !agrees(&mode.jacobian_x(x, u, *t), &mode.jacobian_x_fd(x, u, *t), JAC_TOL) {
                report.push("dynamics-jacobian", format!("mode {} ({}) analytic Jacobian inconsistent", qi, mode.id));
                break;
            }
        }
    }

    for (gi, guard) in problem.guards.iter().enumerate() {
        for (x, _, t) in &probe_points {
            if !guard.value(x, *t).is_finite() {
                report.push("guard", format!("guard {gi} not finite at {:?}", x.as_slice()));
                break;
            }
            if guard.has_analytic_gradient() {
                let (gx, gt) = guard.gradient(x, *t);
                let (fx, ft) = guard.gradient_fd(x, *t);
                let a = Matrix::from_iterator(n + 1, 1, gx.iter().copied().chain(std::iter::once(gt)));
                let b = Matrix::from_iterator(n + 1, 1, fx.iter().copied().chain(std::iter::once(ft)));
                if !agrees(&a, &b, JAC_TOL) {
                    report.push("guard-gradient", format!("guard {gi} gradient inconsistent"));
                    break;
                }
            }
            if !guard.is_time_varying() && guard.gradient_fd(x, *t).1.abs() > 1e-8 {
                report.push("guard-time", format!("guard {gi} declared time-invariant but depends on time"));
                break;
            }
        }
    }

    for (ji, jump) in problem.jumps.iter().enumerate() {
        let (has_jac, has_dt) = jump.has_analytic_parts();
        for (x, _, t) in &probe_points {
            let y = jump.apply(x, *t);
            if y.len() != n || !y.iter().all(|v| v.is_finite()) {
                report.push("jump", format!("jump {ji} returns an invalid state"));
                break;
            }
            if has_jac && !agrees(&jump.jacobian_x(x, *t), &jump.jacobian_x_fd(x, *t), JAC_TOL) {
                report.push("jump-jacobian", format!("jump {ji} analytic Jacobian inconsistent"));
                break;
            }
            let dt_fd = jump.d_t_fd(x, *t);
            if !jump.is_time_varying() {
                if dt_fd.amax() > 1e-8 {
                    report.push("jump-time", format!("jump {ji} declared time-invariant but depends on time"));
                    break;
                }
            } else if has_dt {
                let a = Matrix::from_column_slice(n, 1, jump.d_t(x, *t).as_slice());
                let b = Matrix::from_column_slice(n, 1, dt_fd.as_slice());
                if !agrees(&a, &b, JAC_TOL) {
                    report.push("jump-time-derivative", format!("jump {ji} time derivative inconsistent"));
                    break;
                }
            }
        }
    }

    for (x, _, _) in &probe_points {
        let h = problem.terminal_cost.value(x);
        let g = problem.terminal_cost.gradient(x);
        let gfd = problem.terminal_cost.gradient_fd(x);
        if !h.is_finite() || g.len() != n {
            report.push("terminal-cost", "terminal cost invalid");
            break;
        }
        let a = Matrix::from_column_slice(n, 1, g.as_slice());
        let b = Matrix::from_column_slice(n, 1, gfd.as_slice());
        if !agrees(&a, &b, GRAD_TOL) {
            report.push("terminal-gradient", "terminal gradient inconsistent with finite differences");
            break;
        }
    }

    let any_tv_guard = problem.guards.iter().any(|g| g.is_time_varying());
    let any_tv_jump = problem.jumps.iter().any(|j| j.is_time_varying());
    let variant = problem.variant;
    let mismatch = match variant {
        TheoremVariant::TimeInvariant | TheoremVariant::InteriorOptimal => {
            (any_tv_guard || any_tv_jump).then_some("time-varying guards or jumps require a time-varying variant")
        }
        TheoremVariant::TimeVaryingGuard => {
            if !any_tv_guard {
                Some("requires a time-varying guard")
            } else if any_tv_jump {
                Some("time-varying jumps require TimeVaryingJump or Combined")
            } else {
                None
            }
        }
        TheoremVariant::TimeVaryingJump => (!any_tv_jump).then_some("requires a time-varying jump"),
        TheoremVariant::Combined => (!(any_tv_guard && any_tv_jump)).then_some("requires a time-varying guard and jump"),
    };
    if let Some(reason) = mismatch {
        report.push("variant", format!("variant {variant} inconsistent: {reason}"));
    }
    report
}
