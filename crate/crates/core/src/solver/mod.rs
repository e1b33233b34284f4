//! Indirect shooting on the necessary conditions and direct oracles used to
//! certify its answers independently.

mod oracle;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HmpError, ModelError, SolverError};
use crate::geometry::normal_covector;
use crate::hmp::{
    adjoint_jump_forward, adjoint_jump_forward_with_mu, check_trajectory, expected_jump_for, minimize_hamiltonian,
    HmpReport, SwitchContext, Tolerances,
};
use crate::integrate::{time_grid, AdjointTrajectory, ArcSample, HybridTrajectory, SwitchRecord, TrajectoryArc};
use crate::model::{validate, HybridProblem, Mode, ShootingState, Vector};

pub use oracle::{
    direct_oracle, value_surface_oracle, OracleOptions, OracleSolution, SurfaceOptions, MAX_CONTROL_DIM,
    MAX_GRID_POINTS, MAX_SEGMENTS,
};

/// Shooting residuals grouped by the condition they close.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    /// `p(tf) - dh(x(tf))`.
    pub terminal: Vec<f64>,
    /// Guard value at each pre-jump state.
    pub guards: Vec<f64>,
    /// Measured minus expected Hamiltonian jump. Empty when the multipliers
    /// are eliminated.
    pub hjumps: Vec<f64>,
}

impl ResidualVector {
    pub fn to_vector(&self) -> Vector {
        Vector::from_iterator(
            self.terminal.len() + self.guards.len() + self.hjumps.len(),
            self.terminal.iter().chain(&self.guards).chain(&self.hjumps).copied(),
        )
    }

    pub fn norm_inf(&self) -> f64 {
        self.terminal.iter().chain(&self.guards).chain(&self.hjumps).fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    /// Integration step; `None` uses the problem default.
    pub step: Option<f64>,
    /// Convergence threshold on the residual max norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative forward-difference step of the Jacobian.
    pub fd_step: f64,
    /// Recompute the multipliers from the Hamiltonian jump condition instead
    /// of carrying them as unknowns.
    pub eliminate_mu: bool,
    /// Thresholds of the final certification.
    pub tolerances: Tolerances,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            step: None,
            tol: 1e-8,
            max_iter: 200,
            fd_step: 1e-7,
            eliminate_mu: false,
            tolerances: Tolerances::default(),
        }
    }
}

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;
const SINGULAR_RATIO: f64 = 1e-13;
const ELIMINATION_PASSES: usize = 8;

/// Trajectory, costate and residuals of one shot.
#[derive(Debug, Clone)]
pub struct Shot {
    pub trajectory: HybridTrajectory,
    pub adjoint: AdjointTrajectory,
    pub residual: ResidualVector,
    /// Multipliers applied at the jumps (given or eliminated).
    pub mus: Vec<f64>,
}

/// Checks the shape and ordering of a shooting state.
pub fn check_admissible(problem: &HybridProblem, z: &ShootingState, with_mus: bool) -> Result<(), SolverError> {
    let n = problem.state_dim();
    let l = problem.num_switches();
    let bad = |m: String| Err(SolverError::Inadmissible(m));
    if z.p0.len() != n {
        return bad(format!("p0 has length {}, expected {n}", z.p0.len()));
    }
    if z.switch_times.len() != l {
        return bad(format!("{} switch times given, expected {l}", z.switch_times.len()));
    }
    if with_mus && z.mus.len() != l {
        return bad(format!("{} multipliers given, expected {l}", z.mus.len()));
    }
    if !z.p0.iter().chain(&z.switch_times).chain(&z.mus).all(|v| v.is_finite()) {
        return bad("non-finite entry".into());
    }
    let mut prev = problem.t0;
    for (i, &t) in z.switch_times.iter().enumerate() {
        if !(t > prev) {
            return bad(format!("switch time {i} = {t} does not exceed {prev}"));
        }
        prev = t;
    }
    if l > 0 && !(prev < problem.tf) {
        return bad(format!("last switch time {prev} is not before tf = {}", problem.tf));
    }
    Ok(())
}

struct Coupled<'a> {
    problem: &'a HybridProblem,
    mode: &'a Mode,
}

impl Coupled<'_> {
    fn control(&self, t: f64, x: &Vector, p: &Vector) -> Vector {
        minimize_hamiltonian(self.mode, x, p, t, &self.problem.control_set)
    }

    fn rhs(&self, t: f64, x: &Vector, p: &Vector) -> (Vector, Vector) {
        let u = self.control(t, x, p);
        let dx = self.mode.eval(x, &u, t);
        let dp = -self.mode.jacobian_x(x, &u, t).tr_mul(p);
        (dx, dp)
    }

    fn rk4(&self, t: f64, x: &Vector, p: &Vector, h: f64) -> (Vector, Vector) {
        let (k1x, k1p) = self.rhs(t, x, p);
        let (k2x, k2p) = self.rhs(t + 0.5 * h, &(x + &k1x * (0.5 * h)), &(p + &k1p * (0.5 * h)));
        let (k3x, k3p) = self.rhs(t + 0.5 * h, &(x + &k2x * (0.5 * h)), &(p + &k2p * (0.5 * h)));
        let (k4x, k4p) = self.rhs(t + h, &(x + &k3x * h), &(p + &k3p * h));
        (
            x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0),
            p + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0),
        )
    }

    fn arc(
        &self,
        index: usize,
        x0: &Vector,
        p0: &Vector,
        span: (f64, f64),
        step: f64,
    ) -> Result<(TrajectoryArc, Vec<Vector>), SolverError> {
        let grid = time_grid(span.0, span.1, step, &[])?;
        let mut samples = Vec::with_capacity(grid.len());
        let mut slopes = Vec::with_capacity(grid.len());
        let mut costates = Vec::with_capacity(grid.len());
        let (mut x, mut p) = (x0.clone(), p0.clone());
        let mut u = self.control(grid[0], &x, &p);
        for k in 0..grid.len() {
            let t = grid[k];
            if !(x.iter().chain(p.iter()).all(|v| v.is_finite() && v.abs() < 1e100)) {
                return Err(SolverError::Numerical(format!("state or costate left the finite range at t = {t}")));
            }
            samples.push(ArcSample { t, x: x.clone(), u: u.clone() });
            costates.push(p.clone());
            if k + 1 == grid.len() {
                break;
            }
            let (xn, pn) = self.rk4(t, &x, &p, grid[k + 1] - t);
            let un = self.control(grid[k + 1], &xn, &pn);
            slopes.push((self.mode.eval(&x, &u, t), self.mode.eval(&xn, &un, grid[k + 1])));
            x = xn;
            p = pn;
            u = un;
        }
        Ok((TrajectoryArc::from_parts(index, step, samples, slopes), costates))
    }
}

/// Integrates state and costate forward from `(x0, p0)` with the pointwise
/// minimizing control, jumping at the given switch times with the given
/// multipliers, or with multipliers eliminated through the Hamiltonian jump
/// condition when `eliminate_mu` is set.
pub fn shoot(problem: &HybridProblem, z: &ShootingState, step: f64, eliminate_mu: bool) -> Result<Shot, SolverError> {
    check_admissible(problem, z, !eliminate_mu)?;
    let l = problem.num_switches();
    let mut bounds = vec![problem.t0];
    bounds.extend(&z.switch_times);
    bounds.push(problem.tf);
    let mut x = problem.x0.clone();
    let mut p = Vector::from_column_slice(&z.p0);
    let mut arcs = Vec::with_capacity(l + 1);
    let mut costates = Vec::with_capacity(l + 1);
    let mut switches = Vec::with_capacity(l);
    let mut guards = Vec::with_capacity(l);
    let mut hjumps = Vec::with_capacity(l);
    let mut mus = Vec::with_capacity(l);
    for q in 0..=l {
        let sys = Coupled { problem, mode: &problem.modes[q] };
        let (arc, ps) = sys.arc(q, &x, &p, (bounds[q], bounds[q + 1]), step)?;
        let x_minus = arc.final_state().clone();
        let p_minus = ps.last().expect("arc has samples").clone();
        let u_minus = arc.samples.last().expect("arc has samples").u.clone();
        arcs.push(arc);
        costates.push(ps);
        if q == l {
            break;
        }
        let t = bounds[q + 1];
        let after = &problem.modes[q + 1];
        let guard = &problem.guards[q];
        guards.push(guard.value(&x_minus, t));
        let jump = &problem.jumps[q];
        let x_plus = jump.apply(&x_minus, t);
        let (gx, gt) = guard.gradient(&x_minus, t);
        let dn = normal_covector(&gx, gt, &problem.metric, &problem.point(x_minus.clone()), problem.normalize_normals)
            .map_err(HmpError::from)?;
        let mut ctx = SwitchContext {
            variant: problem.variant,
            before: &problem.modes[q],
            after,
            jump,
            t,
            x_minus: x_minus.clone(),
            x_plus: x_plus.clone(),
            u_minus,
            u_plus: Vector::zeros(problem.control_dim()),
            covector: dn.clone(),
            dstar_t_v: None,
        };
        let (p_plus, mu) = if eliminate_mu {
            let mut p_plus = adjoint_jump_forward_with_mu(&ctx, &p_minus, 0.0)?;
            let mut mu = 0.0;
            for _ in 0..ELIMINATION_PASSES {
                ctx.u_plus = minimize_hamiltonian(after, &x_plus, &p_plus, t, &problem.control_set);
                let (pp, m) = adjoint_jump_forward(&ctx, &p_minus)?;
                let settled = (&pp - &p_plus).amax() <= 1e-15 * (1.0 + pp.amax());
                p_plus = pp;
                mu = m;
                if settled {
                    break;
                }
            }
            (p_plus, mu)
        } else {
            (adjoint_jump_forward_with_mu(&ctx, &p_minus, z.mus[q])?, z.mus[q])
        };
        ctx.u_plus = minimize_hamiltonian(after, &x_plus, &p_plus, t, &problem.control_set);
        let measured = ctx.measured_jump(&p_minus, &p_plus);
        let expected = expected_jump_for(&ctx, &p_plus, mu)?;
        if !eliminate_mu {
            hjumps.push(measured - expected);
        }
        mus.push(mu);
        switches.push(SwitchRecord {
            index: q,
            t,
            x_minus,
            x_plus: x_plus.clone(),
            dn,
            mu: Some(mu),
            dh_expected: Some(expected),
            dh_measured: Some(measured),
        });
        x = x_plus;
        p = p_plus;
    }
    let trajectory = HybridTrajectory { chart: problem.chart, arcs, switches };
    let adjoint = AdjointTrajectory { arcs: costates };
    let terminal = (adjoint.terminal() - problem.terminal_cost.gradient(trajectory.final_state())).iter().copied().collect();
    Ok(Shot { trajectory, adjoint, residual: ResidualVector { terminal, guards, hjumps }, mus })
}

/// Shooting residual at the problem's default step.
pub fn shooting_residual(problem: &HybridProblem, z: &ShootingState) -> Result<ResidualVector, SolverError> {
    Ok(shoot(problem, z, problem.default_step(), false)?.residual)
}

/// Converged shooting solution with its certification report.
#[derive(Debug, Clone)]
pub struct Solution {
    pub state: ShootingState,
    pub trajectory: HybridTrajectory,
    pub adjoint: AdjointTrajectory,
    pub residual: ResidualVector,
    pub report: HmpReport,
    pub iterations: usize,
    /// Residual max norm at the start of every iteration.
    pub history: Vec<f64>,
}

impl Solution {
    pub fn cost(&self, problem: &HybridProblem) -> f64 {
        self.trajectory.cost(problem)
    }
}

/// Damped Newton iteration on the shooting residual. `max_iter` bounds the
/// number of residual evaluations at which convergence is tested.
pub fn solve(problem: &HybridProblem, guess: &ShootingState, opts: &SolverOptions) -> Result<Solution, SolverError> {
    let validation = validate(problem);
    if !validation.is_clean() {
        return Err(ModelError::Invalid(validation.to_string()).into());
    }
    let with_mus = !opts.eliminate_mu;
    let mut template = guess.clone();
    if !with_mus && template.mus.len() != problem.num_switches() {
        template.mus = vec![0.0; problem.num_switches()];
    }
    check_admissible(problem, &template, with_mus)?;
    let step = opts.step.unwrap_or_else(|| problem.default_step());
    let n = problem.state_dim();
    let l = problem.num_switches();
    let to_state = |z: &Vector| ShootingState::from_vector(z, n, l, with_mus, &template);
    let eval = |z: &Vector| -> Result<Shot, SolverError> { shoot(problem, &to_state(z), step, opts.eliminate_mu) };
    let full = template.to_vector();
    let mut z = if with_mus { full } else { full.rows(0, n + l).into_owned() };
    let mut shot = eval(&z)?;
    let mut history = Vec::new();
    for iteration in 0..opts.max_iter {
        let f = shot.residual.to_vector();
        let norm = f.amax();
        history.push(norm);
        if norm <= opts.tol {
            let mut state = to_state(&z);
            state.mus = shot.mus.clone();
            let report = check_trajectory(problem, &shot.trajectory, &shot.adjoint, &opts.tolerances);
            return Ok(Solution {
                state,
                trajectory: shot.trajectory,
                adjoint: shot.adjoint,
                residual: shot.residual,
                report,
                iterations: iteration,
                history,
            });
        }
        let jac = jacobian(&eval, &z, &f, opts.fd_step)?;
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(ratio >= SINGULAR_RATIO) {
            return Err(SolverError::SingularJacobian { iteration, ratio });
        }
        let d = svd.solve(&(-&f), 0.0).map_err(|e| SolverError::Numerical(e.to_string()))?;
        let phi0 = f.norm_squared();
        let mut alpha = 1.0;
        loop {
            let trial = &z + &d * alpha;
            if let Ok(s) = eval(&trial) {
                let phi = s.residual.to_vector().norm_squared();
                if phi <= (1.0 - 2.0 * ARMIJO * alpha) * phi0 {
                    z = trial;
                    shot = s;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < MIN_STEP {
                return Err(SolverError::LineSearchStall { iteration, residual: norm });
            }
        }
    }
    Err(SolverError::MaxIterations { iterations: opts.max_iter, residual: shot.residual.norm_inf() })
}

/// Forward-difference Jacobian with columns evaluated in parallel. A column
/// whose forward point is inadmissible falls back to a backward difference.
fn jacobian(
    eval: &(dyn Fn(&Vector) -> Result<Shot, SolverError> + Sync),
    z: &Vector,
    f: &Vector,
    rel: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let cols: Vec<Result<Vector, SolverError>> = (0..z.len())
        .into_par_iter()
        .map(|j| {
            let h = rel * (1.0 + z[j].abs());
            let mut zp = z.clone();
            zp[j] += h;
            match eval(&zp) {
                Ok(s) => Ok((s.residual.to_vector() - f) / h),
                Err(SolverError::Inadmissible(_)) => {
                    zp[j] = z[j] - h;
                    Ok((f - eval(&zp)?.residual.to_vector()) / h)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut jac = DMatrix::zeros(f.len(), z.len());
    for (j, c) in cols.into_iter().enumerate() {
        jac.set_column(j, &c?);
    }
    Ok(jac)
}

#[cfg(test)]
mod tests;
