use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use nalgebra::{dvector, DMatrix};
use proptest::prelude::*;

use super::csv::{read_trajectory_csv, write_trajectory_csv};
use super::*;
use crate::geometry::ChartId;
use crate::model::instantiate;

fn pt(x: Vector) -> ChartPoint {
    ChartPoint::new(ChartId(0), x)
}

fn const_law(u: f64) -> ConstantControl {
    ConstantControl(dvector![u])
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
fn expm(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let norm = a.amax() * n as f64;
    let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(s);
    let mut term = DMatrix::identity(n, n);
    let mut sum = DMatrix::identity(n, n);
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

fn linear_mode(a: Matrix) -> Mode {
    let aj = a.clone();
    Mode::new("lin", move |x, _u, _t| &a * x).with_jacobian(move |_, _, _| aj.clone())
}

#[test]
fn constant_field_is_exact() {
    let mode = Mode::new("c", |_x, _u, _t| dvector![1.0, 0.0]);
    let cs = ControlSet::interval(-1.0, 1.0);
    let arc = integrate_arc(&mode, &pt(dvector![0.0, 0.0]), &const_law(0.0), &cs, (0.0, 1.0), 0.01).unwrap();
    assert_abs_diff_eq!(arc.final_state()[0], 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(arc.final_state()[1], 0.0, epsilon = 1e-12);
    assert_eq!(arc.t_end, 1.0);
    assert!(arc.samples.windows(2).all(|w| w[1].t > w[0].t));
}

#[test]
fn exponential_growth_matches_e() {
    let mode = Mode::new("exp", |x, _u, _t| x.clone());
    let cs = ControlSet::interval(0.0, 0.0);
    let arc = integrate_arc(&mode, &pt(dvector![1.0]), &const_law(0.0), &cs, (0.0, 1.0), 0.001).unwrap();
    assert!((arc.final_state()[0] - std::f64::consts::E).abs() <= 1e-8);
}

#[test]
fn nonpositive_step_is_rejected() {
    let mode = Mode::new("exp", |x, _u, _t| x.clone());
    let cs = ControlSet::interval(0.0, 0.0);
    for h in [0.0, -0.1] {
        let r = integrate_arc(&mode, &pt(dvector![1.0]), &const_law(0.0), &cs, (0.0, 1.0), h);
        assert!(matches!(r, Err(FlowError::InvalidStep(_))));
    }
}

#[test]
fn last_step_is_shortened() {
    let g = time_grid(0.0, 1.0, 0.3, &[]).unwrap();
    assert_eq!(g, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
    let g = time_grid(0.0, 1.0, 0.25, &[0.1]).unwrap();
    assert_eq!(g, vec![0.0, 0.1, 0.25, 0.5, 0.75, 1.0]);
}

#[test]
fn blowup_reports_time() {
    let p = instantiate("STRESS_blowup", &BTreeMap::new()).unwrap();
    let law = const_law(0.0);
    let err = hybrid_flow(&p, &[&law], &FlowOptions::default()).unwrap_err();
    match err {
        FlowError::BlowUp { time } => assert!(time > 0.99 && time < 1.2, "{time}"),
        other => panic!("unexpected {other:?}"),
    }
}

fn unit_rate_mode() -> Mode {
    Mode::new("q", |_x, u, _t| dvector![u[0], 1.0])
}

#[test]
fn locate_linear_crossing() {
    let mode = unit_rate_mode();
    let cs = ControlSet::interval(-1.0, 1.0);
    let law = const_law(1.0);
    let arc = integrate_arc(&mode, &pt(dvector![0.0, 0.0]), &law, &cs, (0.0, 2.0), 0.003).unwrap();
    let guard = Guard::new(|x, _| x[1] - 1.0, false);
    let ev = locate_event(&mode, &law, &cs, &guard, &arc, EVENT_TOL).unwrap().unwrap();
    assert!((ev.t - 1.0).abs() <= 1e-10);
    assert!((ev.x_minus[1] - 1.0).abs() <= 1e-10);
}

#[test]
fn locate_moving_guard_crossing() {
    let mode = unit_rate_mode();
    let cs = ControlSet::interval(-1.0, 1.0);
    let law = const_law(1.0);
    let arc = integrate_arc(&mode, &pt(dvector![0.0, 0.0]), &law, &cs, (0.0, 2.0), 0.0031).unwrap();
    let guard = Guard::new(|x, t| x[1] - 0.5 * t - 0.5, true);
    let ev = locate_event(&mode, &law, &cs, &guard, &arc, EVENT_TOL).unwrap().unwrap();
    assert!((ev.t - 1.0).abs() <= 1e-10);
}

#[test]
fn absent_crossing_is_not_an_error() {
    let mode = unit_rate_mode();
    let cs = ControlSet::interval(-1.0, 1.0);
    let law = const_law(1.0);
    let arc = integrate_arc(&mode, &pt(dvector![0.0, 0.0]), &law, &cs, (0.0, 0.5), 0.01).unwrap();
    let guard = Guard::new(|x, _| x[1] - 1.0, false);
    assert!(locate_event(&mode, &law, &cs, &guard, &arc, EVENT_TOL).unwrap().is_none());
}

#[test]
fn tangential_crossing_is_detected() {
    // x2 = (t - 1)^3 touches zero with vanishing rate.
    let mode = Mode::new("cubic", |_x, _u, t| dvector![0.0, 3.0 * (t - 1.0) * (t - 1.0)]).time_dependent();
    let cs = ControlSet::interval(0.0, 0.0);
    let law = const_law(0.0);
    let arc = integrate_arc(&mode, &pt(dvector![0.0, -1.0]), &law, &cs, (0.0, 2.0), 0.01).unwrap();
    let guard = Guard::new(|x, _| x[1], false);
    let r = locate_event(&mode, &law, &cs, &guard, &arc, EVENT_TOL);
    assert!(matches!(r, Err(FlowError::TangentialCrossing { .. })), "{r:?}");
}

#[test]
fn tangent_flow_examples() {
    let cs = ControlSet::interval(-1.0, 1.0);
    let mode = unit_rate_mode().with_jacobian(|_, _, _| DMatrix::zeros(2, 2));
    let arc = integrate_arc(&mode, &pt(dvector![0.0, 0.0]), &const_law(0.3), &cs, (0.0, 1.0), 0.01).unwrap();
    assert_eq!(tangent_flow(&mode, &arc, &dvector![0.7, -2.0]).unwrap(), dvector![0.7, -2.0]);

    let a = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 0.8, -0.3]);
    let lin = linear_mode(a.clone());
    let arc = integrate_arc(&lin, &pt(dvector![1.0, 0.5]), &const_law(0.0), &cs, (0.0, 1.5), 0.0015).unwrap();
    let v0 = dvector![0.4, -1.1];
    let v = tangent_flow(&lin, &arc, &v0).unwrap();
    let oracle = expm(&(&a * 1.5)) * &v0;
    assert!((v - oracle).amax() <= 1e-8);
    assert_eq!(tangent_flow(&lin, &arc, &dvector![0.0, 0.0]).unwrap(), dvector![0.0, 0.0]);
}

#[test]
fn cotangent_flow_examples() {
    let cs = ControlSet::interval(-1.0, 1.0);
    let mode = unit_rate_mode().with_jacobian(|_, _, _| DMatrix::zeros(2, 2));
    let arc = integrate_arc(&mode, &pt(dvector![0.0, 0.0]), &const_law(0.3), &cs, (0.0, 1.0), 0.01).unwrap();
    let ps = cotangent_flow(&mode, &arc, &dvector![-2.0, 2.0]).unwrap();
    assert_eq!(ps.len(), arc.samples.len());
    assert!(ps.iter().all(|p| *p == dvector![-2.0, 2.0]));

    let a = DMatrix::from_row_slice(2, 2, &[0.1, -1.0, 0.8, -0.3]);
    let lin = linear_mode(a.clone());
    let arc = integrate_arc(&lin, &pt(dvector![1.0, 0.5]), &const_law(0.0), &cs, (0.0, 1.5), 0.0015).unwrap();
    let p_end = dvector![0.3, 2.0];
    let ps = cotangent_flow(&lin, &arc, &p_end).unwrap();
    for (k, s) in arc.samples.iter().enumerate().step_by(97) {
        let oracle = expm(&(a.transpose() * (1.5 - s.t))) * &p_end;
        assert!((&ps[k] - oracle).amax() <= 1e-8, "t = {}", s.t);
    }
}

#[test]
fn hybrid_flow_ex2_and_ex1() {
    let p = instantiate("EX2_rate_switch", &BTreeMap::new()).unwrap();
    let law = const_law(1.0);
    let tr = hybrid_flow(&p, &[&law], &FlowOptions::default()).unwrap();
    assert_eq!(tr.switches.len(), 1);
    let sw = &tr.switches[0];
    assert!((sw.t - 1.0).abs() <= 1e-10);
    assert!((&sw.x_minus - dvector![1.0, 1.0]).amax() <= 1e-10);
    assert!((&sw.x_plus - dvector![1.0, 1.0]).amax() <= 1e-10);
    assert!((tr.final_state() - dvector![2.0, 3.0]).amax() <= 1e-10);
    assert_eq!(tr.final_time(), 2.0);

    let p = instantiate("EX1_shift_jump", &BTreeMap::new()).unwrap();
    let tr = hybrid_flow(&p, &[&law], &FlowOptions::default()).unwrap();
    assert!((&tr.switches[0].x_plus - dvector![1.5, 1.0]).amax() <= 1e-10);
    assert!((tr.final_state() - dvector![2.5, 2.0]).amax() <= 1e-10);
}

#[test]
fn hybrid_flow_single_mode_has_no_switches() {
    let p = instantiate("LQR1_single_mode", &BTreeMap::new()).unwrap();
    let law = const_law(-1.0);
    let tr = hybrid_flow(&p, &[&law], &FlowOptions::default()).unwrap();
    assert!(tr.switches.is_empty());
    assert_eq!(tr.arcs.len(), 1);
    assert!((tr.final_state()[0] - 0.5).abs() <= 1e-12);
}

#[test]
fn extra_crossing_is_a_schedule_violation() {
    let p = instantiate("EX2_rate_switch", &BTreeMap::new()).unwrap();
    let law = const_law(1.0);
    let opts = FlowOptions { max_switches: Some(0), ..Default::default() };
    assert!(matches!(hybrid_flow(&p, &[&law], &opts), Err(FlowError::ScheduleViolation { .. })));
}

#[test]
fn arc_boundaries_are_consistent() {
    let p = instantiate("EX5_three_mode", &BTreeMap::new()).unwrap();
    let law = const_law(1.0);
    let tr = hybrid_flow(&p, &[&law], &FlowOptions::default()).unwrap();
    assert_eq!(tr.switches.len(), 2);
    for (i, sw) in tr.switches.iter().enumerate() {
        assert_eq!(tr.arcs[i].t_end, sw.t);
        assert_eq!(tr.arcs[i + 1].t_start, sw.t);
        assert_eq!(tr.arcs[i + 1].initial_state(), &sw.x_plus);
        assert!(p.guards[i].value(&sw.x_minus, sw.t).abs() <= 1e-10);
        assert!((p.jumps[i].apply(&sw.x_minus, sw.t) - &sw.x_plus).amax() <= 1e-14);
    }
    // Second crossing solves 0.25 s^2 + 1.5 s - 1.3 = 0 after t = 1.
    let s = (-1.5 + (2.25f64 + 1.3).sqrt()) / 0.5;
    assert!((tr.switches[1].t - (1.0 + s)).abs() <= 1e-9);
}

#[test]
fn piecewise_constant_law_respects_segments() {
    let p = instantiate("LQR1_single_mode", &BTreeMap::new()).unwrap();
    let law = PiecewiseConstant { t0: 0.0, t1: 0.5, values: vec![dvector![-1.0], dvector![1.0], dvector![0.0], dvector![-1.0]] };
    let tr = hybrid_flow(&p, &[&law], &FlowOptions { step: Some(0.03), ..Default::default() }).unwrap();
    // 0.125 * (-1 + 1 + 0 - 1) = -0.125
    assert!((tr.final_state()[0] - 0.875).abs() <= 1e-14);
}

#[test]
fn csv_round_trip_preserves_samples() {
    let p = instantiate("EX5_three_mode", &BTreeMap::new()).unwrap();
    let law = const_law(1.0);
    let tr = hybrid_flow(&p, &[&law], &FlowOptions::default()).unwrap();
    let adj = AdjointTrajectory {
        arcs: tr.arcs.iter().map(|a| a.samples.iter().map(|s| s.x.map(|v| v * 0.5 - 1.0)).collect()).collect(),
    };
    let text = write_trajectory_csv(&p, &tr, Some(&adj));
    assert!(text.starts_with("# hmp trajectory v1"));
    let (back, back_adj) = read_trajectory_csv(&p, &text).unwrap();
    assert_eq!(back_adj.unwrap(), adj);
    assert_eq!(back.arcs.len(), tr.arcs.len());
    for (a, b) in back.arcs.iter().zip(&tr.arcs) {
        assert_eq!(a.samples, b.samples);
    }
    for (a, b) in back.switches.iter().zip(&tr.switches) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.x_minus, b.x_minus);
        assert_eq!(a.x_plus, b.x_plus);
    }
    let no_p = write_trajectory_csv(&p, &tr, None);
    assert!(read_trajectory_csv(&p, &no_p).unwrap().1.is_none());
    let truncated = &text[..text.len() / 2];
    assert!(read_trajectory_csv(&p, truncated).is_err());
}

fn random_matrix(vals: &[f64], n: usize) -> Matrix {
    DMatrix::from_row_slice(n, n, &vals[..n * n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(25))]

    #[test]
    fn duality_on_linear_instances(
        a in prop::collection::vec(-1.0f64..1.0, 9),
        v in prop::collection::vec(-1.0f64..1.0, 3),
        p in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let a = random_matrix(&a, 3);
        let mode = linear_mode(a);
        let cs = ControlSet::interval(0.0, 0.0);
        let arc = integrate_arc(&mode, &pt(dvector![1.0, 0.0, -1.0]), &const_law(0.0), &cs, (0.0, 1.0), 0.01).unwrap();
        let v0 = Vector::from_vec(v);
        let pe = Vector::from_vec(p);
        let lhs = cotangent_flow(&mode, &arc, &pe).unwrap()[0].dot(&v0);
        let rhs = pe.dot(&tangent_flow(&mode, &arc, &v0).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-8);
    }

    #[test]
    fn duality_on_nonlinear_instances(
        c in prop::collection::vec(-1.0f64..1.0, 4),
        v in prop::collection::vec(-1.0f64..1.0, 2),
        p in prop::collection::vec(-1.0f64..1.0, 2),
        u in -1.0f64..1.0,
    ) {
        let (c0, c1, c2, c3) = (c[0], c[1], c[2], c[3]);
        let mode = Mode::new("nl", move |x, u, _t| dvector![c0 * x[1].sin() + u[0], c1 * x[0] * x[1] + c2 * x[0].cos() + c3])
            .with_jacobian(move |x, _u, _t| DMatrix::from_row_slice(2, 2, &[0.0, c0 * x[1].cos(), c1 * x[1] - c2 * x[0].sin(), c1 * x[0]]));
        let cs = ControlSet::interval(-1.0, 1.0);
        let arc = integrate_arc(&mode, &pt(dvector![0.3, -0.2]), &const_law(u), &cs, (0.0, 1.0), 0.005).unwrap();
        let v0 = Vector::from_vec(v);
        let pe = Vector::from_vec(p);
        let lhs = cotangent_flow(&mode, &arc, &pe).unwrap()[0].dot(&v0);
        let rhs = pe.dot(&tangent_flow(&mode, &arc, &v0).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-8);
    }
}
