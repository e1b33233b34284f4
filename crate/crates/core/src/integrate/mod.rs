//! Fixed-step flows: hybrid state integration with guard events and jumps,
//! variational (tangent) and adjoint (cotangent) propagation along arcs.

pub mod csv;

use nalgebra::DVector;

use crate::error::FlowError;
use crate::geometry::{normal_covector, ChartId, ChartPoint, SpaceTimeCovector};
use crate::model::{ControlSet, Guard, HybridProblem, Matrix, Mode, Vector};

/// Default event tolerance on the guard value.
pub const EVENT_TOL: f64 = 1e-10;
/// Crossing rates below this are treated as tangential.
pub const TANGENTIAL_RATE: f64 = 1e-8;
const BISECTION_ITERS: usize = 80;
const BLOWUP_LIMIT: f64 = 1e100;

/// A control law `u(t, x, p)`. The costate is `None` during plain simulation.
pub trait ControlLaw: Send + Sync {
    fn control(&self, t: f64, x: &Vector, p: Option<&Vector>) -> Vector;

    /// Control used inside the integration step `interval`. Laws that are
    /// discontinuous in time override this so that every stage of a step sees
    /// the same branch.
    fn control_on(&self, t: f64, x: &Vector, p: Option<&Vector>, _interval: (f64, f64)) -> Vector {
        self.control(t, x, p)
    }

    /// Times at which the law may be discontinuous; the integrator places
    /// grid points there.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl<F> ControlLaw for F
where
    F: Fn(f64, &Vector, Option<&Vector>) -> Vector + Send + Sync,
{
    fn control(&self, t: f64, x: &Vector, p: Option<&Vector>) -> Vector {
        self(t, x, p)
    }
}

#[derive(Debug, Clone)]
pub struct ConstantControl(pub Vector);

impl ControlLaw for ConstantControl {
    fn control(&self, _t: f64, _x: &Vector, _p: Option<&Vector>) -> Vector {
        self.0.clone()
    }
}

/// Piecewise-constant control on equal segments of `[t0, t1]`.
#[derive(Debug, Clone)]
pub struct PiecewiseConstant {
    pub t0: f64,
    pub t1: f64,
    pub values: Vec<Vector>,
}

impl PiecewiseConstant {
    fn segment(&self, t: f64) -> usize {
        let k = self.values.len();
        let s = ((t - self.t0) / (self.t1 - self.t0) * k as f64).floor();
        (s.max(0.0) as usize).min(k - 1)
    }
}

impl ControlLaw for PiecewiseConstant {
    fn control(&self, t: f64, _x: &Vector, _p: Option<&Vector>) -> Vector {
        self.values[self.segment(t)].clone()
    }

    fn control_on(&self, _t: f64, _x: &Vector, _p: Option<&Vector>, interval: (f64, f64)) -> Vector {
        self.values[self.segment(0.5 * (interval.0 + interval.1))].clone()
    }

    fn breakpoints(&self) -> Vec<f64> {
        let k = self.values.len();
        (1..k).map(|j| self.t0 + (self.t1 - self.t0) * j as f64 / k as f64).collect()
    }
}

/// Replays recorded controls, linearly interpolated between samples.
#[derive(Debug, Clone)]
pub struct SampledControl {
    times: Vec<f64>,
    values: Vec<Vector>,
}

impl SampledControl {
    pub fn from_arc(arc: &TrajectoryArc) -> Self {
        Self {
            times: arc.samples.iter().map(|s| s.t).collect(),
            values: arc.samples.iter().map(|s| s.u.clone()).collect(),
        }
    }

    pub fn eval(&self, t: f64) -> Vector {
        interpolate_linear(&self.times, &self.values, t)
    }
}

impl ControlLaw for SampledControl {
    fn control(&self, t: f64, _x: &Vector, _p: Option<&Vector>) -> Vector {
        self.eval(t)
    }
}

/// Replaces a base law by `u1` on `[t1, t1 + eps)`.
pub struct NeedleControl<'a> {
    pub base: &'a dyn ControlLaw,
    pub t1: f64,
    pub eps: f64,
    pub u1: Vector,
}

impl ControlLaw for NeedleControl<'_> {
    fn control(&self, t: f64, x: &Vector, p: Option<&Vector>) -> Vector {
        if t >= self.t1 && t < self.t1 + self.eps {
            self.u1.clone()
        } else {
            self.base.control(t, x, p)
        }
    }

    fn control_on(&self, t: f64, x: &Vector, p: Option<&Vector>, interval: (f64, f64)) -> Vector {
        let mid = 0.5 * (interval.0 + interval.1);
        if self.eps > 0.0 && mid >= self.t1 && mid < self.t1 + self.eps {
            self.u1.clone()
        } else {
            self.base.control_on(t, x, p, interval)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b = self.base.breakpoints();
        if self.eps > 0.0 {
            b.push(self.t1);
            b.push(self.t1 + self.eps);
        }
        b
    }
}

fn interpolate_linear(times: &[f64], values: &[Vector], t: f64) -> Vector {
    if times.len() == 1 || t <= times[0] {
        return values[0].clone();
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last].clone();
    }
    let k = times.partition_point(|&s| s <= t).saturating_sub(1).min(last - 1);
    let (a, b) = (times[k], times[k + 1]);
    if b <= a {
        return values[k + 1].clone();
    }
    let w = (t - a) / (b - a);
    &values[k] * (1.0 - w) + &values[k + 1] * w
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcSample {
    pub t: f64,
    pub x: Vector,
    pub u: Vector,
}

/// Integration record of one mode between two switching instants.
#[derive(Debug, Clone)]
pub struct TrajectoryArc {
    pub mode: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub step: f64,
    pub samples: Vec<ArcSample>,
    /// State derivatives at both ends of every step, taken with the control
    /// used inside that step. Drives the cubic Hermite dense output.
    slopes: Vec<(Vector, Vector)>,
}

impl TrajectoryArc {
    /// Rebuilds an arc from stored samples, recomputing end slopes from the
    /// recorded controls.
    pub fn from_samples(mode_index: usize, mode: &Mode, samples: Vec<ArcSample>) -> Self {
        let slopes = samples
            .windows(2)
            .map(|w| (mode.eval(&w[0].x, &w[0].u, w[0].t), mode.eval(&w[1].x, &w[1].u, w[1].t)))
            .collect();
        let t_start = samples.first().map(|s| s.t).unwrap_or(0.0);
        let t_end = samples.last().map(|s| s.t).unwrap_or(0.0);
        let step = samples.windows(2).map(|w| w[1].t - w[0].t).fold(0.0, f64::max);
        Self { mode: mode_index, t_start, t_end, step, samples, slopes }
    }

    pub(crate) fn from_parts(mode: usize, step: f64, samples: Vec<ArcSample>, slopes: Vec<(Vector, Vector)>) -> Self {
        debug_assert_eq!(slopes.len() + 1, samples.len());
        let t_start = samples[0].t;
        let t_end = samples.last().map(|s| s.t).unwrap_or(t_start);
        Self { mode, t_start, t_end, step, samples, slopes }
    }

    pub fn final_state(&self) -> &Vector {
        &self.samples.last().expect("arc has samples").x
    }

    pub fn initial_state(&self) -> &Vector {
        &self.samples[0].x
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    fn step_index(&self, t: f64) -> usize {
        let last = self.samples.len() - 1;
        let k = self.samples.partition_point(|s| s.t <= t).saturating_sub(1);
        k.min(last.saturating_sub(1))
    }

    /// Cubic Hermite dense output of the state.
    pub fn state_at(&self, t: f64) -> Vector {
        if self.samples.len() == 1 {
            return self.samples[0].x.clone();
        }
        let k = self.step_index(t);
        self.hermite(k, t)
    }

    fn hermite(&self, k: usize, t: f64) -> Vector {
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        let h = b.t - a.t;
        if h <= 0.0 {
            return b.x.clone();
        }
        let s = (t - a.t) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (da, db) = &self.slopes[k];
        &a.x * h00 + da * (h10 * h) + &b.x * h01 + db * (h11 * h)
    }

    /// Recorded control, linearly interpolated.
    pub fn control_at(&self, t: f64) -> Vector {
        if self.samples.len() == 1 {
            return self.samples[0].u.clone();
        }
        let k = self.step_index(t);
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        let h = b.t - a.t;
        if h <= 0.0 {
            return b.u.clone();
        }
        let w = ((t - a.t) / h).clamp(0.0, 1.0);
        &a.u * (1.0 - w) + &b.u * w
    }

    fn truncate_at(&mut self, k: usize, t_s: f64, x_minus: Vector, u_minus: Vector, slope_pair: (Vector, Vector)) {
        self.samples.truncate(k + 1);
        self.slopes.truncate(k);
        if t_s > self.samples[k].t {
            self.samples.push(ArcSample { t: t_s, x: x_minus, u: u_minus });
            self.slopes.push(slope_pair);
        } else {
            self.samples[k].x = x_minus;
        }
        self.t_end = t_s;
    }
}

/// A located switching and the data attached to it.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchRecord {
    pub index: usize,
    pub t: f64,
    pub x_minus: Vector,
    pub x_plus: Vector,
    pub dn: SpaceTimeCovector,
    pub mu: Option<f64>,
    pub dh_expected: Option<f64>,
    pub dh_measured: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct HybridTrajectory {
    pub chart: ChartId,
    pub arcs: Vec<TrajectoryArc>,
    pub switches: Vec<SwitchRecord>,
}

impl HybridTrajectory {
    pub fn final_state(&self) -> &Vector {
        self.arcs.last().expect("trajectory has arcs").final_state()
    }

    pub fn final_time(&self) -> f64 {
        self.arcs.last().map(|a| a.t_end).unwrap_or(f64::NAN)
    }

    pub fn cost(&self, problem: &HybridProblem) -> f64 {
        problem.terminal_cost.value(self.final_state())
    }

    /// Index of the arc whose open interval contains `t`.
    pub fn arc_containing(&self, t: f64) -> Option<usize> {
        self.arcs.iter().position(|a| t > a.t_start && t < a.t_end)
    }
}

/// Costate samples aligned with the samples of a [`HybridTrajectory`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub arcs: Vec<Vec<Vector>>,
}

impl AdjointTrajectory {
    pub fn initial(&self) -> &Vector {
        &self.arcs[0][0]
    }

    pub fn terminal(&self) -> &Vector {
        self.arcs.last().and_then(|a| a.last()).expect("adjoint has samples")
    }

    pub fn max_norm(&self) -> f64 {
        self.arcs.iter().flatten().map(|p| p.amax()).fold(0.0, f64::max)
    }
}

/// Time grid from `t0` to `t1` with nominal spacing `step`, containing every
/// breakpoint strictly inside the span. The last step is shortened so that
/// `t1` is hit exactly.
pub fn time_grid(t0: f64, t1: f64, step: f64, breakpoints: &[f64]) -> Result<Vec<f64>, FlowError> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(FlowError::InvalidStep(step));
    }
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(FlowError::InvalidSpan(t0, t1));
    }
    let span = t1 - t0;
    let merge_tol = 1e-12 * (1.0 + t0.abs().max(t1.abs()));
    let count = (span / step).ceil() as usize;
    let mut grid: Vec<f64> = (0..count).map(|k| t0 + k as f64 * step).filter(|&t| t < t1 - merge_tol).collect();
    if grid.is_empty() {
        grid.push(t0);
    }
    grid.extend(breakpoints.iter().copied().filter(|&b| b > t0 + merge_tol && b < t1 - merge_tol));
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= merge_tol);
    if span > 0.0 {
        grid.push(t1);
    }
    Ok(grid)
}

fn check_finite(x: &Vector, t: f64) -> Result<(), FlowError> {
    if x.iter().all(|v| v.is_finite() && v.abs() < BLOWUP_LIMIT) {
        Ok(())
    } else {
        Err(FlowError::BlowUp { time: t })
    }
}

/// State-only dynamics of one mode under a control law.
struct StateSystem<'a> {
    mode: &'a Mode,
    law: &'a dyn ControlLaw,
    cs: &'a ControlSet,
}

impl StateSystem<'_> {
    fn control(&self, t: f64, x: &Vector, iv: (f64, f64)) -> Vector {
        self.cs.clamp(&self.law.control_on(t, x, None, iv))
    }

    fn rhs(&self, t: f64, x: &Vector, iv: (f64, f64)) -> Vector {
        self.mode.eval(x, &self.control(t, x, iv), t)
    }

    fn rk4(&self, t: f64, x: &Vector, h: f64) -> Vector {
        let iv = (t, t + h);
        let k1 = self.rhs(t, x, iv);
        let k2 = self.rhs(t + 0.5 * h, &(x + &k1 * (0.5 * h)), iv);
        let k3 = self.rhs(t + 0.5 * h, &(x + &k2 * (0.5 * h)), iv);
        let k4 = self.rhs(t + h, &(x + &k3 * h), iv);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    fn slope_pair(&self, t0: f64, x0: &Vector, t1: f64, x1: &Vector) -> (Vector, Vector) {
        let iv = (t0, t1);
        (self.rhs(t0, x0, iv), self.rhs(t1, x1, iv))
    }
}

/// Integrates one mode with classical RK4 on a fixed grid.
pub fn integrate_arc(
    mode: &Mode,
    x0: &ChartPoint,
    law: &dyn ControlLaw,
    control_set: &ControlSet,
    t_span: (f64, f64),
    step: f64,
) -> Result<TrajectoryArc, FlowError> {
    let breaks = law.breakpoints();
    march(0, mode, &x0.coords, law, control_set, t_span, step, &breaks, None).map(|(arc, _)| arc)
}

/// Marches until `t_span.1`, or until the end of the first step across which
/// `stop` changes sign (the returned index is that step).
#[allow(clippy::too_many_arguments)]
fn march(
    mode_index: usize,
    mode: &Mode,
    x0: &Vector,
    law: &dyn ControlLaw,
    cs: &ControlSet,
    t_span: (f64, f64),
    step: f64,
    breakpoints: &[f64],
    stop: Option<&Guard>,
) -> Result<(TrajectoryArc, Option<usize>), FlowError> {
    let grid = time_grid(t_span.0, t_span.1, step, breakpoints)?;
    check_finite(x0, t_span.0)?;
    let sys = StateSystem { mode, law, cs };
    let mut samples = Vec::with_capacity(grid.len());
    let mut slopes = Vec::with_capacity(grid.len());
    let mut x = x0.clone();
    let first_iv = (grid[0], *grid.get(1).unwrap_or(&grid[0]));
    samples.push(ArcSample { t: grid[0], u: sys.control(grid[0], &x, first_iv), x: x.clone() });
    let mut g_prev = stop.map(|g| g.value(&x, grid[0]));
    let mut crossing = None;
    for k in 0..grid.len().saturating_sub(1) {
        let (ta, tb) = (grid[k], grid[k + 1]);
        let xn = sys.rk4(ta, &x, tb - ta);
        check_finite(&xn, tb)?;
        slopes.push(sys.slope_pair(ta, &x, tb, &xn));
        let next_iv = if k + 2 < grid.len() { (tb, grid[k + 2]) } else { (ta, tb) };
        samples.push(ArcSample { t: tb, u: sys.control(tb, &xn, next_iv), x: xn.clone() });
        x = xn;
        if let (Some(g), Some(gp)) = (stop, g_prev) {
            let gn = g.value(&x, tb);
            if gp != 0.0 && (gn == 0.0 || gn.signum() != gp.signum()) {
                crossing = Some(k);
                break;
            }
            g_prev = Some(gn);
        }
    }
    let t_end = samples.last().map(|s| s.t).unwrap_or(t_span.0);
    Ok((TrajectoryArc { mode: mode_index, t_start: t_span.0, t_end, step, samples, slopes }, crossing))
}

/// Result of event location: crossing time and pre-jump state.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x_minus: Vector,
    /// Index of the arc step containing the crossing.
    pub step_index: usize,
}

/// Locates the first guard crossing on an arc: bisection on the dense output,
/// then a bracketed secant polish on the partial RK4 step so that the
/// returned state is exactly an RK4 state. `None` when no sign change occurs.
pub fn locate_event(
    mode: &Mode,
    law: &dyn ControlLaw,
    control_set: &ControlSet,
    guard: &Guard,
    arc: &TrajectoryArc,
    tol: f64,
) -> Result<Option<Event>, FlowError> {
    let vals: Vec<f64> = arc.samples.iter().map(|s| guard.value(&s.x, s.t)).collect();
    let Some(k) = (0..vals.len().saturating_sub(1))
        .find(|&k| vals[k] != 0.0 && (vals[k + 1] == 0.0 || vals[k + 1].signum() != vals[k].signum()))
    else {
        return Ok(None);
    };
    let (a, b) = (&arc.samples[k], &arc.samples[k + 1]);
    let scale = vals[k].abs().max(vals[k + 1].abs());
    let gamma_dense = |t: f64| guard.value(&arc.hermite(k, t), t);

    let (mut lo, mut hi) = (a.t, b.t);
    let mut g_lo = vals[k];
    let mut t_bis = hi;
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let gm = gamma_dense(mid);
        t_bis = mid;
        if gm.abs() <= tol * (1.0 + scale) {
            break;
        }
        if gm.signum() == g_lo.signum() {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
        }
    }

    let sys = StateSystem { mode, law, cs: control_set };
    let phi = |s: f64| -> (f64, Vector) {
        let x = if s <= 0.0 { a.x.clone() } else { sys.rk4(a.t, &a.x, s) };
        (guard.value(&x, a.t + s), x)
    };
    let h = b.t - a.t;
    let (mut s_lo, mut s_hi) = (0.0, h);
    let (mut f_lo, f_hi0) = (vals[k], vals[k + 1]);
    let mut f_hi = f_hi0;
    let mut s_prev = (t_bis - a.t).clamp(0.0, h);
    let (mut f_prev, mut x_best) = phi(s_prev);
    let mut s_best = s_prev;
    let mut f_best = f_prev;
    if f_hi.abs() < f_best.abs() {
        s_best = h;
        f_best = f_hi;
        x_best = b.x.clone();
    }
    let mut s_cur = (s_prev + 1e-6 * h).min(h);
    for _ in 0..60 {
        if f_best.abs() <= 1e-14 * (1.0 + scale) || (s_hi - s_lo) <= 1e-15 * (1.0 + b.t.abs()) {
            break;
        }
        let (f_cur, x_cur) = phi(s_cur);
        if f_cur.abs() < f_best.abs() {
            s_best = s_cur;
            f_best = f_cur;
            x_best = x_cur;
        }
        if f_cur == 0.0 {
            break;
        }
        if f_cur.signum() == f_lo.signum() {
            s_lo = s_cur;
            f_lo = f_cur;
        } else {
            s_hi = s_cur;
            f_hi = f_cur;
        }
        let denom = f_cur - f_prev;
        let mut s_next = if denom != 0.0 { s_cur - f_cur * (s_cur - s_prev) / denom } else { f64::NAN };
        if !(s_next > s_lo && s_next < s_hi) {
            s_next = if f_hi != f_lo { s_lo - f_lo * (s_hi - s_lo) / (f_hi - f_lo) } else { 0.5 * (s_lo + s_hi) };
            if !(s_next > s_lo && s_next < s_hi) {
                s_next = 0.5 * (s_lo + s_hi);
            }
        }
        s_prev = s_cur;
        f_prev = f_cur;
        s_cur = s_next;
    }

    let t_s = a.t + s_best;
    let (gx, gt) = guard.gradient(&x_best, t_s);
    let u = sys.control(t_s, &x_best, (a.t, b.t));
    let rate = gx.dot(&mode.eval(&x_best, &u, t_s)) + gt;
    if rate.abs() < TANGENTIAL_RATE {
        return Err(FlowError::TangentialCrossing { time: t_s, rate });
    }
    Ok(Some(Event { t: t_s, x_minus: x_best, step_index: k }))
}

/// Options for [`hybrid_flow`].
#[derive(Debug, Clone)]
pub struct FlowOptions {
    /// Integration step; `None` selects `1e-3` of the horizon.
    pub step: Option<f64>,
    pub event_tol: f64,
    /// Maximum number of switchings; `None` allows one per guard.
    pub max_switches: Option<usize>,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { step: None, event_tol: EVENT_TOL, max_switches: None }
    }
}

/// Simulates the hybrid system along the fixed mode sequence. `laws` holds
/// one control law per mode; a shorter list reuses its last entry.
pub fn hybrid_flow(
    problem: &HybridProblem,
    laws: &[&dyn ControlLaw],
    opts: &FlowOptions,
) -> Result<HybridTrajectory, FlowError> {
    assert!(!laws.is_empty(), "at least one control law is required");
    let step = opts.step.unwrap_or_else(|| problem.default_step());
    let l = problem.num_switches();
    let limit = opts.max_switches.unwrap_or(l).min(l);
    let mut arcs = Vec::with_capacity(l + 1);
    let mut switches = Vec::with_capacity(l);
    let mut t = problem.t0;
    let mut x = problem.x0.clone();
    let mut q = 0;
    loop {
        let law = laws[q.min(laws.len() - 1)];
        let mode = &problem.modes[q];
        let guard = problem.guards.get(q);
        let breaks = law.breakpoints();
        let (mut arc, crossing) = march(q, mode, &x, law, &problem.control_set, (t, problem.tf), step, &breaks, guard)?;
        let Some(k) = crossing else {
            arcs.push(arc);
            break;
        };
        let guard = guard.expect("crossing implies a guard");
        if q >= limit {
            return Err(FlowError::ScheduleViolation { guard: q, consumed: q, limit });
        }
        let ev = locate_event(mode, law, &problem.control_set, guard, &arc, opts.event_tol)?
            .expect("sign change was detected on this arc");
        debug_assert_eq!(ev.step_index, k);
        let sys = StateSystem { mode, law, cs: &problem.control_set };
        let ta = arc.samples[ev.step_index].t;
        let xa = arc.samples[ev.step_index].x.clone();
        let iv = (ta, ev.t);
        let u_minus = sys.control(ev.t, &ev.x_minus, iv);
        let slopes = sys.slope_pair(ta, &xa, ev.t, &ev.x_minus);
        arc.truncate_at(ev.step_index, ev.t, ev.x_minus.clone(), u_minus, slopes);

        let x_plus = problem.jumps[q].apply(&ev.x_minus, ev.t);
        check_finite(&x_plus, ev.t)?;
        let (gx, gt) = guard.gradient(&ev.x_minus, ev.t);
        let dn = normal_covector(&gx, gt, &problem.metric, &problem.point(ev.x_minus.clone()), problem.normalize_normals)?;
        switches.push(SwitchRecord {
            index: q,
            t: ev.t,
            x_minus: ev.x_minus,
            x_plus: x_plus.clone(),
            dn,
            mu: None,
            dh_expected: None,
            dh_measured: None,
        });
        arcs.push(arc);
        t = ev.t;
        x = x_plus;
        q += 1;
    }
    Ok(HybridTrajectory { chart: problem.chart, arcs, switches })
}

/// Linear time-varying field `A(t)` along a recorded arc.
fn arc_jacobian(mode: &Mode, arc: &TrajectoryArc, t: f64) -> Matrix {
    mode.jacobian_x(&arc.state_at(t), &arc.control_at(t), t)
}

fn linear_rk4(a: impl Fn(f64) -> Matrix, t: f64, v: &Vector, h: f64) -> Vector {
    let a0 = a(t);
    let am = a(t + 0.5 * h);
    let a1 = a(t + h);
    let k1 = &a0 * v;
    let k2 = &am * (v + &k1 * (0.5 * h));
    let k3 = &am * (v + &k2 * (0.5 * h));
    let k4 = &a1 * (v + &k3 * h);
    v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Variational flow `V' = (df/dx) V` from `t_from` to the arc end, along the
/// recorded state and control.
pub fn tangent_flow_from(mode: &Mode, arc: &TrajectoryArc, t_from: f64, v0: &Vector) -> Result<Vector, FlowError> {
    let mut times: Vec<f64> = vec![t_from];
    times.extend(arc.samples.iter().map(|s| s.t).filter(|&t| t > t_from));
    let mut v = v0.clone();
    for w in times.windows(2) {
        v = linear_rk4(|t| arc_jacobian(mode, arc, t), w[0], &v, w[1] - w[0]);
        check_finite(&v, w[1])?;
    }
    Ok(v)
}

/// Tangent flow over the whole arc.
pub fn tangent_flow(mode: &Mode, arc: &TrajectoryArc, v0: &Vector) -> Result<Vector, FlowError> {
    tangent_flow_from(mode, arc, arc.t_start, v0)
}

/// Adjoint flow `p' = -(df/dx)^T p` integrated backward from the arc end.
/// Returns one costate per arc sample.
pub fn cotangent_flow(mode: &Mode, arc: &TrajectoryArc, p_end: &Vector) -> Result<Vec<Vector>, FlowError> {
    let m = arc.samples.len();
    let mut out = vec![DVector::zeros(p_end.len()); m];
    out[m - 1] = p_end.clone();
    let mut p = p_end.clone();
    for k in (0..m - 1).rev() {
        let (ta, tb) = (arc.samples[k].t, arc.samples[k + 1].t);
        p = linear_rk4(|t| -arc_jacobian(mode, arc, t).transpose(), tb, &p, ta - tb);
        check_finite(&p, ta)?;
        out[k] = p.clone();
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
