//! Needle variations: terminal state sensitivity and the terminal cone test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::switching_time_sensitivity;
use crate::error::HmpError;
use crate::geometry::{CotangentVec, SpaceTimeCovector, TangentVec};
use crate::integrate::{
    hybrid_flow, tangent_flow, tangent_flow_from, ControlLaw, FlowOptions, HybridTrajectory, NeedleControl,
    SampledControl,
};
use crate::model::{HybridProblem, Vector};

/// Replace the control by `u1` on `[t1, t1 + epsilon)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeedleSpec {
    pub t1: f64,
    pub u1: Vec<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-4
}

/// Minimum distance between a needle instant and an arc boundary.
const NEEDLE_MARGIN: f64 = 1e-9;

fn locate_needle(problem: &HybridProblem, traj: &HybridTrajectory, spec: &NeedleSpec) -> Result<usize, HmpError> {
    if !spec.t1.is_finite() || !(spec.epsilon >= 0.0) {
        return Err(HmpError::InvalidNeedle("t1 must be finite and epsilon nonnegative".into()));
    }
    let u1 = Vector::from_column_slice(&spec.u1);
    if !problem.control_set.contains(&u1, 0.0) {
        return Err(HmpError::InvalidNeedle(format!("u1 = {:?} outside the control set", spec.u1)));
    }
    let margin = NEEDLE_MARGIN * (1.0 + spec.t1.abs());
    traj.arcs
        .iter()
        .position(|a| spec.t1 > a.t_start + margin && spec.t1 < a.t_end - margin)
        .ok_or_else(|| {
            HmpError::InvalidNeedle(format!("t1 = {} is not strictly inside an arc (switch instants excluded)", spec.t1))
        })
}

/// Terminal variation `d x(tf) / d eps` of a needle, propagated through every
/// downstream switching.
pub fn needle_terminal_variation(
    problem: &HybridProblem,
    traj: &HybridTrajectory,
    spec: &NeedleSpec,
) -> Result<TangentVec, HmpError> {
    let j = locate_needle(problem, traj, spec)?;
    let arc = &traj.arcs[j];
    let mode = &problem.modes[arc.mode];
    let x1 = arc.state_at(spec.t1);
    let u0 = arc.control_at(spec.t1);
    let u1 = Vector::from_column_slice(&spec.u1);
    let delta = mode.eval(&x1, &u1, spec.t1) - mode.eval(&x1, &u0, spec.t1);
    let mut v = tangent_flow_from(mode, arc, spec.t1, &delta)?;
    for i in j..traj.switches.len() {
        let sw = &traj.switches[i];
        let before = &traj.arcs[i];
        let after = &traj.arcs[i + 1];
        let u_minus = &before.samples.last().expect("arc samples").u;
        let u_plus = &after.samples[0].u;
        let f_minus = problem.modes[before.mode].eval(&sw.x_minus, u_minus, sw.t);
        let f_plus = problem.modes[after.mode].eval(&sw.x_plus, u_plus, sw.t);
        let base = problem.point(sw.x_minus.clone());
        let (gx, gt) = problem.guards[i].gradient(&sw.x_minus, sw.t);
        let dn = SpaceTimeCovector { dn_x: CotangentVec::new(base.clone(), gx)?, dn_t: gt };
        let tau = switching_time_sensitivity(
            &dn,
            &TangentVec::new(base.clone(), f_minus.clone())?,
            &TangentVec::new(base, v.clone())?,
        )?;
        let jump = &problem.jumps[i];
        let dz = jump.jacobian_x(&sw.x_minus, sw.t);
        let dt = jump.d_t(&sw.x_minus, sw.t);
        let v_plus = &dz * &v + (&dz * &f_minus + dt - f_plus) * tau;
        v = tangent_flow(&problem.modes[after.mode], after, &v_plus)?;
    }
    Ok(TangentVec::new(problem.point(traj.final_state().clone()), v)?)
}

/// Finite-difference terminal variation by re-simulating the recorded
/// controls with the needle inserted, Richardson-extrapolated over the two
/// amplitudes `eps`.
pub fn needle_fd_variation(
    problem: &HybridProblem,
    traj: &HybridTrajectory,
    spec: &NeedleSpec,
    eps: (f64, f64),
    step: Option<f64>,
) -> Result<Vector, HmpError> {
    let j = locate_needle(problem, traj, spec)?;
    let sampled: Vec<SampledControl> = traj.arcs.iter().map(SampledControl::from_arc).collect();
    let opts = FlowOptions { step, ..Default::default() };
    let terminal = |e: f64| -> Result<Vector, HmpError> {
        let needle = NeedleControl { base: &sampled[j], t1: spec.t1, eps: e, u1: Vector::from_column_slice(&spec.u1) };
        let laws: Vec<&dyn ControlLaw> =
            (0..sampled.len()).map(|i| if i == j { &needle as &dyn ControlLaw } else { &sampled[i] }).collect();
        Ok(hybrid_flow(problem, &laws, &opts)?.final_state().clone())
    };
    let x0 = terminal(0.0)?;
    let d1 = (terminal(eps.0)? - &x0) / eps.0;
    let d2 = (terminal(eps.1)? - &x0) / eps.1;
    Ok((d2 * eps.0 - d1 * eps.1) / (eps.0 - eps.1))
}

/// Draws needle specs uniformly over the arcs (weighted by duration) and the
/// control box, keeping `margin` away from arc boundaries.
pub fn random_needles(
    problem: &HybridProblem,
    traj: &HybridTrajectory,
    count: usize,
    seed: u64,
    margin: f64,
) -> Vec<NeedleSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usable: Vec<(f64, f64)> = traj
        .arcs
        .iter()
        .filter(|a| a.t_end - a.t_start > 2.0 * margin)
        .map(|a| (a.t_start + margin, a.t_end - margin))
        .collect();
    let total: f64 = usable.iter().map(|(a, b)| b - a).sum();
    let cs = &problem.control_set;
    (0..count)
        .filter_map(|_| {
            if usable.is_empty() {
                return None;
            }
            let mut r = rng.gen_range(0.0..total);
            let mut t1 = usable[0].0;
            for (a, b) in &usable {
                if r <= b - a {
                    t1 = a + r;
                    break;
                }
                r -= b - a;
            }
            let u1 = (0..cs.dim()).map(|i| rng.gen_range(cs.lower[i]..=cs.upper[i])).collect();
            Some(NeedleSpec { t1, u1, epsilon: default_epsilon() })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeEntry {
    pub spec: NeedleSpec,
    pub variation: Vec<f64>,
    pub pairing: f64,
    pub violates: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeReport {
    pub tolerance: f64,
    pub entries: Vec<ConeEntry>,
    pub min_pairing: f64,
    pub violations: usize,
    pub pass: bool,
}

/// Pairs `dh(x(tf))` with the terminal variation of every needle and flags
/// pairings below `-tol`.
pub fn cone_nonnegativity(
    problem: &HybridProblem,
    traj: &HybridTrajectory,
    specs: &[NeedleSpec],
    tol: f64,
) -> ConeReport {
    let dh = problem.terminal_cost.gradient(traj.final_state());
    let entries: Vec<ConeEntry> = specs
        .iter()
        .map(|spec| match needle_terminal_variation(problem, traj, spec) {
            Ok(v) => {
                let pairing = dh.dot(&v.comps);
                ConeEntry {
                    spec: spec.clone(),
                    variation: v.comps.iter().copied().collect(),
                    pairing,
                    violates: pairing < -tol,
                    error: None,
                }
            }
            Err(e) => ConeEntry {
                spec: spec.clone(),
                variation: Vec::new(),
                pairing: f64::NAN,
                violates: false,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let min_pairing = entries.iter().map(|e| e.pairing).filter(|p| p.is_finite()).fold(f64::INFINITY, f64::min);
    let violations = entries.iter().filter(|e| e.violates).count();
    let errors = entries.iter().filter(|e| e.error.is_some()).count();
    ConeReport { tolerance: tol, entries, min_pairing, violations, pass: violations == 0 && errors == 0 }
}
