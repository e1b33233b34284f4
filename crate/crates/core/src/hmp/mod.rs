//! Necessary conditions of the hybrid maximum principle as executable checks.

mod needle;
mod report;
mod surface;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::HmpError;
use crate::geometry::{check_dim, pullback_jump, CotangentVec, SpaceTimeCovector, TangentVec};
use crate::integrate::{cotangent_flow, AdjointTrajectory, HybridTrajectory};
use crate::model::{ControlSet, HybridProblem, Jump, Mode, TheoremVariant, Vector};
use crate::optim::grid_then_golden;

pub use needle::{
    cone_nonnegativity, needle_fd_variation, needle_terminal_variation, random_needles, ConeEntry, ConeReport,
    NeedleSpec,
};
pub use report::{ArcCheck, HmpReport, SwitchCheck, Tolerances};
pub use surface::{dv_covector, dv_jump_covector, DvEstimate, SurfaceChart, SurfaceSample, ValueSurface};

/// Grid points per control dimension before refinement.
pub const CONTROL_GRID: usize = 21;
/// Refinement tolerance of the pointwise minimization.
pub const CONTROL_TOL: f64 = 1e-10;
/// Smallest admissible transversality denominator, relative to the size of
/// the jump covector.
pub const TRANSVERSAL_MIN: f64 = 1e-8;
const JUMP_CONDITION_MAX: f64 = 1e12;

/// Mayer Hamiltonian `H = <p, f_q(x, u, t)>`.
pub fn hamiltonian(mode: &Mode, x: &Vector, p: &Vector, u: &Vector, t: f64) -> Result<f64, HmpError> {
    check_dim(x.len(), p.len())?;
    let f = mode.eval(x, u, t);
    check_dim(p.len(), f.len())?;
    Ok(p.dot(&f))
}

/// Pointwise minimizer of the Hamiltonian over the control box.
pub fn minimize_hamiltonian(mode: &Mode, x: &Vector, p: &Vector, t: f64, control_set: &ControlSet) -> Vector {
    grid_then_golden(|u| p.dot(&mode.eval(x, u, t)), &control_set.lower, &control_set.upper, CONTROL_GRID, CONTROL_TOL).0
}

/// Derivative of the switching time with respect to the needle amplitude,
/// from implicit differentiation of `gamma(x(t(eps)), t(eps)) = 0`.
pub fn switching_time_sensitivity(
    dn: &SpaceTimeCovector,
    f_minus: &TangentVec,
    propagated_delta: &TangentVec,
) -> Result<f64, HmpError> {
    let denom = dn.dn_x.pair(f_minus)? + dn.dn_t;
    let scale = dn.dn_x.comps.amax().max(dn.dn_t.abs());
    if denom.abs() <= TRANSVERSAL_MIN * scale.max(f64::MIN_POSITIVE) || denom == 0.0 {
        return Err(HmpError::TangentialCrossing { denominator: denom });
    }
    Ok(-dn.dn_x.pair(propagated_delta)? / denom)
}

/// Everything known about one switching instant.
#[derive(Debug, Clone)]
pub struct SwitchContext<'a> {
    pub variant: TheoremVariant,
    pub before: &'a Mode,
    pub after: &'a Mode,
    pub jump: &'a Jump,
    pub t: f64,
    pub x_minus: Vector,
    pub x_plus: Vector,
    pub u_minus: Vector,
    pub u_plus: Vector,
    /// Covector multiplying `mu` in the costate jump: the guard normal, or an
    /// estimate of the value-function differential.
    pub covector: SpaceTimeCovector,
    /// Time derivative of the value function for the combined variant; the
    /// covector's time part is used when absent.
    pub dstar_t_v: Option<f64>,
}

impl SwitchContext<'_> {
    pub fn jump_jacobian(&self) -> DMatrix<f64> {
        self.jump.jacobian_x(&self.x_minus, self.t)
    }

    /// `D_t zeta` at the switching point.
    pub fn d_t_zeta(&self) -> Vector {
        self.jump.d_t(&self.x_minus, self.t)
    }

    /// `D*_t zeta (p)` when the variant uses it, zero otherwise.
    pub fn time_pairing(&self, p_plus: &Vector) -> f64 {
        if self.variant.uses_jump_time() {
            p_plus.dot(&self.d_t_zeta())
        } else {
            0.0
        }
    }

    /// Time part of the jump covector as it enters the jump conditions.
    pub fn effective_time_part(&self) -> f64 {
        match self.variant {
            TheoremVariant::Combined => self.dstar_t_v.unwrap_or(self.covector.dn_t),
            v if v.uses_guard_time() => self.covector.dn_t,
            _ => 0.0,
        }
    }

    fn f_minus(&self) -> Vector {
        self.before.eval(&self.x_minus, &self.u_minus, self.t)
    }

    fn f_plus(&self) -> Vector {
        self.after.eval(&self.x_plus, &self.u_plus, self.t)
    }

    fn check_transversal(&self, denom: f64) -> Result<(), HmpError> {
        let scale = self.covector.dn_x.comps.amax().max(self.effective_time_part().abs());
        if denom == 0.0 || denom.abs() <= TRANSVERSAL_MIN * scale {
            return Err(HmpError::TangentialCrossing { denominator: denom });
        }
        Ok(())
    }

    /// `H_before(x-, p-, u-) - H_after(x+, p+, u+)`.
    pub fn measured_jump(&self, p_minus: &Vector, p_plus: &Vector) -> f64 {
        p_minus.dot(&self.f_minus()) - p_plus.dot(&self.f_plus())
    }
}

/// Multiplier `mu` solving the variant's Hamiltonian jump condition.
pub fn compute_mu(ctx: &SwitchContext, p_plus: &Vector) -> Result<f64, HmpError> {
    let n = ctx.x_minus.len();
    check_dim(n, p_plus.len())?;
    let f0 = ctx.f_minus();
    let f1 = ctx.f_plus();
    let pulled = ctx.jump_jacobian().tr_mul(p_plus);
    let h1 = p_plus.dot(&f1);
    let c = ctx.time_pairing(p_plus);
    let denom = ctx.covector.dn_x.comps.dot(&f0) + ctx.effective_time_part();
    ctx.check_transversal(denom)?;
    Ok((h1 - pulled.dot(&f0) - c) / denom)
}

/// Backward costate jump `p- = T*zeta p+ + mu w`.
pub fn adjoint_jump_backward(ctx: &SwitchContext, p_plus: &Vector, mu: f64) -> Result<Vector, HmpError> {
    let xm = crate::geometry::ChartPoint::new(ctx.covector.dn_x.base.chart, ctx.x_minus.clone());
    let xp = crate::geometry::ChartPoint::new(ctx.covector.dn_x.base.chart, ctx.x_plus.clone());
    let pp = CotangentVec::new(xp, p_plus.clone())?;
    let pulled = pullback_jump(&ctx.jump_jacobian(), &pp, &xm)?;
    check_dim(n_of(ctx), ctx.covector.dn_x.comps.len())?;
    Ok(pulled.comps + &ctx.covector.dn_x.comps * mu)
}

fn n_of(ctx: &SwitchContext) -> usize {
    ctx.x_minus.len()
}

/// LU of `D zeta^T` after a conditioning check.
fn transposed_jacobian_lu(ctx: &SwitchContext) -> Result<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, HmpError> {
    let jac = ctx.jump_jacobian();
    let sv = jac.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= JUMP_CONDITION_MAX) {
        return Err(HmpError::NonInvertibleJump { condition });
    }
    Ok(jac.transpose().lu())
}

/// Forward costate jump with a given multiplier: `p+ = (D zeta^T)^{-1} (p- - mu w)`.
pub fn adjoint_jump_forward_with_mu(ctx: &SwitchContext, p_minus: &Vector, mu: f64) -> Result<Vector, HmpError> {
    check_dim(n_of(ctx), p_minus.len())?;
    let lu = transposed_jacobian_lu(ctx)?;
    let rhs = p_minus - &ctx.covector.dn_x.comps * mu;
    lu.solve(&rhs).ok_or(HmpError::NonInvertibleJump { condition: f64::INFINITY })
}

/// Forward costate jump with the multiplier fixed by the Hamiltonian jump
/// condition. The post-jump control in `ctx` is held fixed.
pub fn adjoint_jump_forward(ctx: &SwitchContext, p_minus: &Vector) -> Result<(Vector, f64), HmpError> {
    check_dim(n_of(ctx), p_minus.len())?;
    let lu = transposed_jacobian_lu(ctx)?;
    let a = lu.solve(p_minus).ok_or(HmpError::NonInvertibleJump { condition: f64::INFINITY })?;
    let b = lu.solve(&ctx.covector.dn_x.comps).ok_or(HmpError::NonInvertibleJump { condition: f64::INFINITY })?;
    let f1 = ctx.f_plus();
    let d = if ctx.variant.uses_jump_time() { ctx.d_t_zeta() } else { Vector::zeros(f1.len()) };
    let h0 = p_minus.dot(&ctx.f_minus());
    let w_t = ctx.effective_time_part();
    let g = &f1 - &d;
    let denom = b.dot(&g) + w_t;
    ctx.check_transversal(denom)?;
    let mu = (a.dot(&g) - h0) / denom;
    Ok((a - b * mu, mu))
}

/// Predicted Hamiltonian jump `H_before(t-) - H_after(t)` of each variant.
pub fn hamiltonian_jump_expected(
    variant: TheoremVariant,
    mu: f64,
    dn_t: f64,
    dstar_t_zeta_p: f64,
    dstar_t_v: Option<f64>,
) -> Result<f64, HmpError> {
    let mismatch = |reason: &str| HmpError::VariantMismatch { variant: variant.to_string(), reason: reason.to_string() };
    const ZERO: f64 = 1e-12;
    match variant {
        TheoremVariant::TimeInvariant | TheoremVariant::InteriorOptimal => {
            if dn_t.abs() > ZERO {
                return Err(mismatch("time part of the normal must vanish"));
            }
            if dstar_t_zeta_p.abs() > ZERO {
                return Err(mismatch("jump time derivative must vanish"));
            }
            Ok(0.0)
        }
        TheoremVariant::TimeVaryingGuard => {
            if dstar_t_zeta_p.abs() > ZERO {
                return Err(mismatch("jump time derivative must vanish"));
            }
            Ok(-mu * dn_t)
        }
        TheoremVariant::TimeVaryingJump => Ok(-dstar_t_zeta_p - mu * dn_t),
        TheoremVariant::Combined => Ok(-dstar_t_zeta_p - mu * dstar_t_v.unwrap_or(dn_t)),
    }
}

/// Expected jump for a switch context and a post-jump costate.
pub fn expected_jump_for(ctx: &SwitchContext, p_plus: &Vector, mu: f64) -> Result<f64, HmpError> {
    let dn_t = if ctx.variant.uses_guard_time() { ctx.covector.dn_t } else { 0.0 };
    let dt_v = match ctx.variant {
        TheoremVariant::Combined => Some(ctx.effective_time_part()),
        _ => None,
    };
    hamiltonian_jump_expected(ctx.variant, mu, dn_t, ctx.time_pairing(p_plus), dt_v)
}

/// Builds the switch context of switch `i` from trajectory data.
pub fn switch_context<'a>(problem: &'a HybridProblem, traj: &HybridTrajectory, i: usize) -> SwitchContext<'a> {
    let sw = &traj.switches[i];
    let before = &traj.arcs[i];
    let after = &traj.arcs[i + 1];
    SwitchContext {
        variant: problem.variant,
        before: &problem.modes[before.mode],
        after: &problem.modes[after.mode],
        jump: &problem.jumps[i],
        t: sw.t,
        x_minus: sw.x_minus.clone(),
        x_plus: sw.x_plus.clone(),
        u_minus: before.samples.last().expect("arc has samples").u.clone(),
        u_plus: after.samples[0].u.clone(),
        covector: sw.dn.clone(),
        dstar_t_v: None,
    }
}

/// Evaluates every necessary condition along a trajectory and its costate.
pub fn check_trajectory(
    problem: &HybridProblem,
    traj: &HybridTrajectory,
    adjoint: &AdjointTrajectory,
    tol: &Tolerances,
) -> HmpReport {
    let mut report = HmpReport::new(problem, tol);
    let cs = &problem.control_set;
    if adjoint.arcs.len() != traj.arcs.len()
        || adjoint.arcs.iter().zip(&traj.arcs).any(|(p, a)| p.len() != a.samples.len())
    {
        report.fail("alignment", "costate samples are not aligned with the trajectory");
        report.finish();
        return report;
    }

    for (ai, arc) in traj.arcs.iter().enumerate() {
        let mode = &problem.modes[arc.mode];
        let ps = &adjoint.arcs[ai];
        let gaps: Vec<(f64, f64)> = arc
            .samples
            .par_iter()
            .zip(ps.par_iter())
            .map(|(s, p)| {
                let h_rec = p.dot(&mode.eval(&s.x, &s.u, s.t));
                let u_star = minimize_hamiltonian(mode, &s.x, p, s.t, cs);
                let h_min = p.dot(&mode.eval(&s.x, &u_star, s.t));
                (h_rec - h_min, h_rec)
            })
            .collect();
        let (mut max_gap, mut min_gap, mut worst_t) = (f64::NEG_INFINITY, f64::INFINITY, arc.t_start);
        for (k, (g, _)) in gaps.iter().enumerate() {
            if *g > max_gap {
                max_gap = *g;
                worst_t = arc.samples[k].t;
            }
            min_gap = min_gap.min(*g);
        }
        let h0 = gaps[0].1;
        let h_variation = gaps.iter().map(|(_, h)| (h - h0).abs()).fold(0.0, f64::max);
        let ode = match cotangent_flow(mode, arc, ps.last().expect("costate samples")) {
            Ok(re) => re.iter().zip(ps).map(|(a, b)| (a - b).amax()).fold(0.0, f64::max),
            Err(_) => f64::INFINITY,
        };
        report.arcs.push(ArcCheck {
            arc: ai,
            mode: mode.id.clone(),
            t_start: arc.t_start,
            t_end: arc.t_end,
            ode_residual: ode,
            max_min_gap: max_gap,
            min_min_gap: min_gap,
            worst_gap_time: worst_t,
            autonomous: mode.is_autonomous(),
            h_variation,
        });
    }

    let xf = traj.final_state();
    let pf = adjoint.terminal();
    report.transversality = (pf - problem.terminal_cost.gradient(xf)).amax();

    for i in 0..traj.switches.len() {
        let ctx = switch_context(problem, traj, i);
        let sw = &traj.switches[i];
        let p_minus = adjoint.arcs[i].last().expect("costate samples");
        let p_plus = &adjoint.arcs[i + 1][0];
        let guard_residual = problem.guards[i].value(&sw.x_minus, sw.t).abs();
        let mu = match sw.mu {
            Some(m) => Ok(m),
            None => compute_mu(&ctx, p_plus),
        };
        let check = match mu.and_then(|mu| {
            let recon = adjoint_jump_backward(&ctx, p_plus, mu)?;
            let expected = expected_jump_for(&ctx, p_plus, mu)?;
            Ok((mu, recon, expected))
        }) {
            Ok((mu, recon, expected)) => {
                let measured = ctx.measured_jump(&recon, p_plus);
                SwitchCheck {
                    index: i,
                    t: sw.t,
                    guard_residual,
                    mu,
                    reconstruction_residual: (p_minus - &recon).amax(),
                    dh_expected: expected,
                    dh_measured: measured,
                    dh_residual: (measured - expected).abs(),
                    error: None,
                }
            }
            Err(e) => SwitchCheck {
                index: i,
                t: sw.t,
                guard_residual,
                mu: f64::NAN,
                reconstruction_residual: f64::INFINITY,
                dh_expected: f64::NAN,
                dh_measured: f64::NAN,
                dh_residual: f64::INFINITY,
                error: Some(e.to_string()),
            },
        };
        report.switches.push(check);
    }
    report.max_costate = adjoint.max_norm();
    report.finish();
    report
}

#[cfg(test)]
mod tests;
