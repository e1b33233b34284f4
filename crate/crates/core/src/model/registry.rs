//! Built-in problem instances. Configuration files select one of these by name
//! and may override the documented numeric parameters.

use std::collections::BTreeMap;

use nalgebra::{dvector, DMatrix};

use super::{
    ControlSet, Guard, HybridProblem, Jump, Matrix, Mode, ProblemHints, ShootingState, TerminalCost, TheoremVariant,
    Vector,
};
use crate::error::ModelError;
use crate::geometry::{ChartId, MetricField};

/// A documented numeric parameter of a registry entry.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub min: f64,
    pub max: f64,
    pub doc: &'static str,
}

const fn param(name: &'static str, default: f64, min: f64, max: f64, doc: &'static str) -> ParamSpec {
    ParamSpec { name, default, min, max, doc }
}

pub struct RegistryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub params: &'static [ParamSpec],
    /// Stress entries exercise failure paths and have no optimal solution.
    pub stress: bool,
    build: fn(&Params) -> HybridProblem,
}

struct Params<'a> {
    specs: &'a [ParamSpec],
    values: &'a BTreeMap<String, f64>,
}

impl Params<'_> {
    fn get(&self, name: &str) -> f64 {
        self.values
            .get(name)
            .copied()
            .unwrap_or_else(|| self.specs.iter().find(|s| s.name == name).map(|s| s.default).unwrap_or(f64::NAN))
    }
}

const TF_DOC: &str = "final time (initial time is 0)";

static ENTRIES: &[RegistryEntry] = &[
    RegistryEntry {
        name: "EX1_shift_jump",
        summary: "two modes with a state translation at the guard x2 = 1; interior optimal control",
        params: &[
            param("tf", 2.0, 0.0, 10.0, TF_DOC),
            param("shift", 0.5, -2.0, 2.0, "translation of x1 applied by the jump"),
            param("effort", 0.5, 0.05, 5.0, "weight k of the control effort term k (u - 1)^2 in the x2 rate"),
            param("target", 2.5, -10.0, 10.0, "terminal target for x1"),
        ],
        stress: false,
        build: build_ex1,
    },
    RegistryEntry {
        name: "EX2_rate_switch",
        summary: "two modes switching the x2 rate at the guard x2 = 1; bang-bang optimum",
        params: &[
            param("tf", 2.0, 0.0, 10.0, TF_DOC),
            param("rate", 2.0, 0.1, 10.0, "x2 rate in the second mode"),
            param("target_x1", 3.0, -10.0, 10.0, "terminal target for x1"),
            param("target_x2", 2.0, -10.0, 10.0, "terminal target for x2"),
        ],
        stress: false,
        build: build_ex2,
    },
    RegistryEntry {
        name: "EX3_moving_guard",
        summary: "two modes with the moving guard x2 = slope t + offset",
        params: &[
            param("tf", 2.0, 0.0, 10.0, TF_DOC),
            param("slope", 0.5, -0.9, 0.9, "guard speed"),
            param("offset", 0.5, -2.0, 2.0, "guard position at t = 0"),
            param("effort", 0.5, 0.05, 5.0, "weight k of the control effort term"),
            param("target", 2.0, -10.0, 10.0, "terminal target for x1"),
        ],
        stress: false,
        build: build_ex3,
    },
    RegistryEntry {
        name: "EX4_timed_jump",
        summary: "rate switch with the time-dependent jump x -> x + (drift t, 0)",
        params: &[
            param("tf", 2.0, 0.0, 10.0, TF_DOC),
            param("drift", 0.3, -2.0, 2.0, "time coefficient of the jump translation"),
            param(
                "guard_slope",
                0.0,
                -0.9,
                0.9,
                "guard x2 = 1 + s (t - 1); nonzero values make the guard time-varying (Combined variant)",
            ),
        ],
        stress: false,
        build: build_ex4,
    },
    RegistryEntry {
        name: "EX5_three_mode",
        summary: "three modes, a shear jump and a state-dependent rate; two switchings",
        params: &[
            param("tf", 3.0, 0.0, 10.0, TF_DOC),
            param("shear", 0.2, -1.0, 1.0, "shear coefficient of the first jump"),
            param("level", 2.5, 1.5, 5.0, "level of the second guard x2 = level"),
        ],
        stress: false,
        build: build_ex5,
    },
    RegistryEntry {
        name: "EX6_sphere_chart",
        summary: "rotations of the unit sphere in a stereographic chart with the round metric",
        params: &[
            param("tf", 1.2, 0.0, 5.0, TF_DOC),
            param("angle", 0.3, -3.0, 3.0, "rotation angle of the jump about the polar axis"),
        ],
        stress: false,
        build: build_ex6,
    },
    RegistryEntry {
        name: "LQR1_single_mode",
        summary: "scalar integrator x' = u, |u| <= 1, terminal cost x^2",
        params: &[param("tf", 0.5, 0.0, 10.0, TF_DOC), param("x0", 1.0, -10.0, 10.0, "initial state")],
        stress: false,
        build: build_lqr1,
    },
    RegistryEntry {
        name: "STRESS_blowup",
        summary: "x' = x^2 from x0 = 1; escapes to infinity at t = 1",
        params: &[param("tf", 2.0, 0.0, 10.0, TF_DOC)],
        stress: true,
        build: build_stress,
    },
];

pub fn registry_entries() -> &'static [RegistryEntry] {
    ENTRIES
}

/// Builds a registry problem. Unspecified parameters take their defaults.
pub fn instantiate(name: &str, params: &BTreeMap<String, f64>) -> Result<HybridProblem, ModelError> {
    let entry = ENTRIES.iter().find(|e| e.name == name).ok_or_else(|| ModelError::UnknownProblem(name.to_string()))?;
    for (key, value) in params {
        let spec = entry.params.iter().find(|s| s.name == key).ok_or_else(|| ModelError::UnknownParameter {
            problem: name.to_string(),
            param: key.clone(),
        })?;
        if !value.is_finite() || *value < spec.min || *value > spec.max {
            return Err(ModelError::ParameterOutOfRange { param: key.clone(), value: *value, min: spec.min, max: spec.max });
        }
    }
    Ok((entry.build)(&Params { specs: entry.params, values: params }))
}

fn zeros2() -> Matrix {
    DMatrix::zeros(2, 2)
}

fn constant_controls(modes: usize, u: f64) -> Vec<Vector> {
    vec![dvector![u]; modes]
}

fn base_problem(name: &str, modes: Vec<Mode>, x0: Vector, tf: f64, cs: ControlSet, h: TerminalCost) -> HybridProblem {
    let k = modes.len();
    HybridProblem {
        name: name.to_string(),
        chart: ChartId(0),
        modes,
        guards: Vec::new(),
        jumps: Vec::new(),
        control_set: cs,
        terminal_cost: h,
        x0,
        t0: 0.0,
        tf,
        metric: MetricField::euclidean(),
        variant: TheoremVariant::TimeInvariant,
        normalize_normals: false,
        hints: ProblemHints { nominal_control: constant_controls(k, 1.0), ..Default::default() },
    }
}

fn effort_mode(id: &str, base_rate: f64, k: f64) -> Mode {
    Mode::new(id, move |_x, u, _t| dvector![u[0], base_rate + k * (u[0] - 1.0).powi(2)])
        .with_jacobian(|_x, _u, _t| zeros2())
}

fn build_ex1(p: &Params) -> HybridProblem {
    let (tf, shift, k, target) = (p.get("tf"), p.get("shift"), p.get("effort"), p.get("target"));
    let modes = vec![effort_mode("q0", 1.0, k), effort_mode("q1", 1.0, k)];
    let h = TerminalCost::new(move |x| (x[0] - target).powi(2) + x[1])
        .with_gradient(move |x| dvector![2.0 * (x[0] - target), 1.0]);
    let mut prob = base_problem("EX1_shift_jump", modes, dvector![0.0, 0.0], tf, ControlSet::interval(-1.0, 3.0), h);
    prob.guards = vec![Guard::new(|x, _| x[1] - 1.0, false).with_gradient(|_, _| (dvector![0.0, 1.0], 0.0))];
    prob.jumps = vec![Jump::new(move |x, _| dvector![x[0] + shift, x[1]], false)
        .with_jacobian(|_, _| DMatrix::identity(2, 2))];
    prob.hints.guess = Some(ShootingState::new(vec![0.2, 0.8], vec![0.9], vec![0.3]));
    prob.hints.suboptimal_control = Some(constant_controls(2, 0.0));
    prob.hints.state_box = Some((dvector![-1.0, -1.0], dvector![4.0, 4.0]));
    prob
}

fn build_ex2(p: &Params) -> HybridProblem {
    let (tf, rate, a, b) = (p.get("tf"), p.get("rate"), p.get("target_x1"), p.get("target_x2"));
    let modes = vec![
        Mode::new("q0", |_x, u, _t| dvector![u[0], 1.0]).with_jacobian(|_, _, _| zeros2()),
        Mode::new("q1", move |_x, u, _t| dvector![u[0], rate]).with_jacobian(|_, _, _| zeros2()),
    ];
    let h = TerminalCost::new(move |x| (x[0] - a).powi(2) + (x[1] - b).powi(2))
        .with_gradient(move |x| dvector![2.0 * (x[0] - a), 2.0 * (x[1] - b)]);
    let mut prob = base_problem("EX2_rate_switch", modes, dvector![0.0, 0.0], tf, ControlSet::interval(-1.0, 1.0), h);
    prob.guards = vec![Guard::new(|x, _| x[1] - 1.0, false).with_gradient(|_, _| (dvector![0.0, 1.0], 0.0))];
    prob.jumps = vec![Jump::identity()];
    prob.hints.guess = Some(ShootingState::new(vec![-1.0, 1.0], vec![0.8], vec![0.0]));
    prob.hints.suboptimal_control = Some(constant_controls(2, -1.0));
    prob.hints.state_box = Some((dvector![-3.0, -1.0], dvector![3.0, 5.0]));
    prob
}

fn build_ex3(p: &Params) -> HybridProblem {
    let (tf, slope, offset, k, target) = (p.get("tf"), p.get("slope"), p.get("offset"), p.get("effort"), p.get("target"));
    let modes = vec![effort_mode("q0", 1.0, k), effort_mode("q1", 2.0, k)];
    let h = TerminalCost::new(move |x| (x[0] - target).powi(2) + x[1])
        .with_gradient(move |x| dvector![2.0 * (x[0] - target), 1.0]);
    let mut prob = base_problem("EX3_moving_guard", modes, dvector![0.0, 0.0], tf, ControlSet::interval(-1.0, 3.0), h);
    prob.guards = vec![Guard::new(move |x, t| x[1] - slope * t - offset, true)
        .with_gradient(move |_, _| (dvector![0.0, 1.0], -slope))];
    prob.jumps = vec![Jump::identity()];
    prob.variant = TheoremVariant::TimeVaryingGuard;
    prob.hints.guess = Some(ShootingState::new(vec![0.1, 2.5], vec![0.9], vec![1.5]));
    prob.hints.suboptimal_control = Some(constant_controls(2, 0.0));
    prob.hints.state_box = Some((dvector![-1.0, -1.0], dvector![4.0, 5.0]));
    prob
}

fn build_ex4(p: &Params) -> HybridProblem {
    let (tf, drift, s) = (p.get("tf"), p.get("drift"), p.get("guard_slope"));
    let modes = vec![
        Mode::new("q0", |_x, u, _t| dvector![u[0], 1.0]).with_jacobian(|_, _, _| zeros2()),
        Mode::new("q1", |_x, u, _t| dvector![u[0], 2.0]).with_jacobian(|_, _, _| zeros2()),
    ];
    let h = TerminalCost::new(|x| (x[0] - 3.0).powi(2) + (x[1] - 2.0).powi(2))
        .with_gradient(|x| dvector![2.0 * (x[0] - 3.0), 2.0 * (x[1] - 2.0)]);
    let mut prob = base_problem("EX4_timed_jump", modes, dvector![0.0, 0.0], tf, ControlSet::interval(-1.0, 1.0), h);
    let moving = s != 0.0;
    prob.guards = vec![Guard::new(move |x, t| x[1] - 1.0 - s * (t - 1.0), moving)
        .with_gradient(move |_, _| (dvector![0.0, 1.0], -s))];
    prob.jumps = vec![Jump::new(move |x, t| dvector![x[0] + drift * t, x[1]], true)
        .with_jacobian(|_, _| DMatrix::identity(2, 2))
        .with_time_derivative(move |_, _| dvector![drift, 0.0])];
    prob.variant = if moving { TheoremVariant::Combined } else { TheoremVariant::TimeVaryingJump };
    prob.hints.guess = Some(ShootingState::new(vec![-1.0, 3.0], vec![0.9], vec![2.0]));
    prob.hints.suboptimal_control = Some(constant_controls(2, -1.0));
    prob.hints.state_box = Some((dvector![-3.0, -1.0], dvector![3.0, 5.0]));
    prob
}

fn build_ex5(p: &Params) -> HybridProblem {
    let (tf, shear, level) = (p.get("tf"), p.get("shear"), p.get("level"));
    let modes = vec![
        Mode::new("q0", |_x, u, _t| dvector![u[0], 1.0]).with_jacobian(|_, _, _| zeros2()),
        Mode::new("q1", |x, u, _t| dvector![u[0], 1.0 + 0.5 * x[0]])
            .with_jacobian(|_, _, _| DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0])),
        Mode::new("q2", |_x, u, _t| dvector![u[0], 0.5]).with_jacobian(|_, _, _| zeros2()),
    ];
    let h = TerminalCost::new(|x| -x[0] - 0.1 * x[1]).with_gradient(|_| dvector![-1.0, -0.1]);
    let mut prob = base_problem("EX5_three_mode", modes, dvector![0.0, 0.0], tf, ControlSet::interval(-1.0, 1.0), h);
    prob.guards = vec![
        Guard::new(|x, _| x[1] - 1.0, false).with_gradient(|_, _| (dvector![0.0, 1.0], 0.0)),
        Guard::new(move |x, _| x[1] - level, false).with_gradient(|_, _| (dvector![0.0, 1.0], 0.0)),
    ];
    prob.jumps = vec![
        Jump::new(move |x, _| dvector![x[0], x[1] + shear * x[0]], false)
            .with_jacobian(move |_, _| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, shear, 1.0])),
        Jump::identity(),
    ];
    prob.hints.guess = Some(ShootingState::new(vec![-0.8, 0.0], vec![0.9, 1.7], vec![0.0, 0.0]));
    prob.hints.suboptimal_control = Some(constant_controls(3, -1.0));
    prob.hints.state_box = Some((dvector![-3.0, -1.0], dvector![3.0, 5.0]));
    prob
}

/// Infinitesimal rotations of the unit sphere written in stereographic
/// coordinates, together with their Jacobians.
mod sphere {
    use super::{Matrix, Vector};
    use nalgebra::{dvector, DMatrix};

    pub fn rot_x(x: &Vector) -> Vector {
        dvector![-x[0] * x[1], 0.5 * (x[0] * x[0] - x[1] * x[1] - 1.0)]
    }
    pub fn rot_x_jac(x: &Vector) -> Matrix {
        DMatrix::from_row_slice(2, 2, &[-x[1], -x[0], x[0], -x[1]])
    }
    pub fn rot_y(x: &Vector) -> Vector {
        dvector![0.5 * (x[1] * x[1] - x[0] * x[0] - 1.0), -x[0] * x[1]]
    }
    pub fn rot_y_jac(x: &Vector) -> Matrix {
        DMatrix::from_row_slice(2, 2, &[-x[0], x[1], -x[1], -x[0]])
    }
    pub fn rot_z(x: &Vector) -> Vector {
        dvector![-x[1], x[0]]
    }
    pub fn rot_z_jac() -> Matrix {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }
}

fn build_ex6(p: &Params) -> HybridProblem {
    let (tf, angle) = (p.get("tf"), p.get("angle"));
    let modes = vec![
        Mode::new("q0", |x, u, _t| sphere::rot_z(x) * 0.5 + sphere::rot_y(x) * u[0])
            .with_jacobian(|x, u, _t| sphere::rot_z_jac() * 0.5 + sphere::rot_y_jac(x) * u[0]),
        Mode::new("q1", |x, u, _t| sphere::rot_x(x) * -0.3 + sphere::rot_y(x) * u[0])
            .with_jacobian(|x, u, _t| sphere::rot_x_jac(x) * -0.3 + sphere::rot_y_jac(x) * u[0]),
    ];
    // Height of the sphere point above the equatorial plane.
    let h = TerminalCost::new(|x| {
        let r2 = x.norm_squared();
        (r2 - 1.0) / (1.0 + r2)
    })
    .with_gradient(|x| {
        let s = 1.0 + x.norm_squared();
        x * (4.0 / (s * s))
    });
    let mut prob = base_problem("EX6_sphere_chart", modes, dvector![0.8, -0.3], tf, ControlSet::interval(-1.0, 1.0), h);
    prob.metric = MetricField::stereographic_sphere();
    prob.normalize_normals = true;
    prob.guards = vec![Guard::new(|x, _| x[1], false).with_gradient(|_, _| (dvector![0.0, 1.0], 0.0))];
    let (c, s) = (angle.cos(), angle.sin());
    let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let rot_j = rot.clone();
    prob.jumps = vec![Jump::new(move |x, _| &rot * x, false).with_jacobian(move |_, _| rot_j.clone())];
    prob.hints.guess = Some(ShootingState::new(vec![0.3, -0.3], vec![0.8], vec![0.5]));
    prob.hints.suboptimal_control = Some(constant_controls(2, -1.0));
    prob.hints.state_box = Some((dvector![-1.5, -1.5], dvector![1.5, 1.5]));
    prob
}

fn build_lqr1(p: &Params) -> HybridProblem {
    let (tf, x0) = (p.get("tf"), p.get("x0"));
    let modes = vec![Mode::new("q0", |_x, u, _t| dvector![u[0]]).with_jacobian(|_, _, _| DMatrix::zeros(1, 1))];
    let h = TerminalCost::new(|x| x[0] * x[0]).with_gradient(|x| dvector![2.0 * x[0]]);
    let mut prob = base_problem("LQR1_single_mode", modes, dvector![x0], tf, ControlSet::interval(-1.0, 1.0), h);
    prob.hints.guess = Some(ShootingState::new(vec![0.5], vec![], vec![]));
    prob.hints.suboptimal_control = Some(constant_controls(1, 1.0));
    prob.hints.state_box = Some((dvector![-3.0], dvector![3.0]));
    prob
}

fn build_stress(p: &Params) -> HybridProblem {
    let modes = vec![Mode::new("q0", |x, _u, _t| dvector![x[0] * x[0]])
        .with_jacobian(|x, _, _| DMatrix::from_element(1, 1, 2.0 * x[0]))];
    let h = TerminalCost::new(|x| x[0]).with_gradient(|_| dvector![1.0]);
    let mut prob = base_problem("STRESS_blowup", modes, dvector![1.0], p.get("tf"), ControlSet::interval(0.0, 0.0), h);
    prob.hints.nominal_control = vec![dvector![0.0]];
    prob.hints.state_box = Some((dvector![-2.0], dvector![2.0]));
    prob
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ex2_defaults_match_documented_instance() {
        let p = instantiate("EX2_rate_switch", &BTreeMap::new()).unwrap();
        assert_eq!(p.modes.len(), 2);
        let u = dvector![0.5];
        let x = dvector![0.3, 0.7];
        assert_eq!(p.modes[0].eval(&x, &u, 0.0), dvector![0.5, 1.0]);
        assert_eq!(p.modes[1].eval(&x, &u, 0.0), dvector![0.5, 2.0]);
        assert_eq!(p.guards[0].value(&dvector![0.0, 1.0], 0.3), 0.0);
        assert_eq!(p.jumps[0].apply(&x, 1.0), x);
        assert_eq!(p.terminal_cost.value(&dvector![2.0, 3.0]), 2.0);
        assert_eq!(p.x0, dvector![0.0, 0.0]);
        assert_eq!(p.tf, 2.0);
    }

    #[test]
    fn lqr1_defaults() {
        let p = instantiate("LQR1_single_mode", &BTreeMap::new()).unwrap();
        assert_eq!(p.modes.len(), 1);
        assert!(p.guards.is_empty());
        assert_eq!(p.x0, dvector![1.0]);
        assert_eq!(p.tf, 0.5);
        assert_eq!(p.control_set, ControlSet::interval(-1.0, 1.0));
    }

    #[test]
    fn unknown_name_and_bad_params() {
        assert!(matches!(instantiate("nonexistent", &BTreeMap::new()), Err(ModelError::UnknownProblem(_))));
        let mut params = BTreeMap::new();
        params.insert("tf".to_string(), -1.0);
        assert!(matches!(
            instantiate("EX2_rate_switch", &params),
            Err(ModelError::ParameterOutOfRange { .. })
        ));
        let mut params = BTreeMap::new();
        params.insert("bogus".to_string(), 1.0);
        assert!(matches!(instantiate("EX2_rate_switch", &params), Err(ModelError::UnknownParameter { .. })));
    }

    #[test]
    fn ex4_guard_slope_selects_combined_variant() {
        let mut params = BTreeMap::new();
        params.insert("guard_slope".to_string(), 0.4);
        let p = instantiate("EX4_timed_jump", &params).unwrap();
        assert_eq!(p.variant, TheoremVariant::Combined);
        assert!(p.guards[0].is_time_varying());
    }
}
