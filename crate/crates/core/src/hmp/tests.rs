use std::collections::BTreeMap;

use nalgebra::{dvector, DMatrix};
use proptest::prelude::*;

use super::*;
use crate::geometry::{ChartId, ChartPoint};
use crate::integrate::{hybrid_flow, ConstantControl, ControlLaw, FlowOptions};
use crate::model::instantiate;

fn pt(x: Vector) -> ChartPoint {
    ChartPoint::new(ChartId(0), x)
}

fn covector(x: &Vector, dn_x: Vector, dn_t: f64) -> SpaceTimeCovector {
    SpaceTimeCovector { dn_x: CotangentVec::new(pt(x.clone()), dn_x).unwrap(), dn_t }
}

fn rate_modes() -> (Mode, Mode) {
    (
        Mode::new("q0", |_x, u, _t| dvector![u[0], 1.0]),
        Mode::new("q1", |_x, u, _t| dvector![u[0], 2.0]),
    )
}

fn ctx<'a>(variant: TheoremVariant, before: &'a Mode, after: &'a Mode, jump: &'a Jump, dn_t: f64) -> SwitchContext<'a> {
    let x = dvector![1.0, 1.0];
    SwitchContext {
        variant,
        before,
        after,
        jump,
        t: 1.0,
        x_minus: x.clone(),
        x_plus: jump.apply(&x, 1.0),
        u_minus: dvector![1.0],
        u_plus: dvector![1.0],
        covector: covector(&x, dvector![0.0, 1.0], dn_t),
        dstar_t_v: None,
    }
}

#[test]
fn hamiltonian_examples() {
    let (q0, q1) = rate_modes();
    let x = dvector![0.0, 0.0];
    assert_eq!(hamiltonian(&q0, &x, &dvector![-1.0, 0.0], &dvector![1.0], 0.0).unwrap(), -1.0);
    for u in [-1.0, 0.0, 0.7] {
        assert_eq!(hamiltonian(&q0, &x, &dvector![0.0, 0.0], &dvector![u], 0.0).unwrap(), 0.0);
    }
    assert_eq!(hamiltonian(&q1, &x, &dvector![-2.0, 2.0], &dvector![1.0], 0.0).unwrap(), 2.0);
    assert!(hamiltonian(&q0, &x, &dvector![1.0], &dvector![1.0], 0.0).is_err());
}

#[test]
fn minimize_hamiltonian_examples() {
    let (q0, _) = rate_modes();
    let cs = ControlSet::interval(-1.0, 1.0);
    let x = dvector![0.0, 0.0];
    assert_eq!(minimize_hamiltonian(&q0, &x, &dvector![-1.0, 0.0], 0.0, &cs), dvector![1.0]);
    assert_eq!(minimize_hamiltonian(&q0, &x, &dvector![0.0, 0.0], 0.0, &cs), dvector![-1.0]);
    let quad = Mode::new("quad", |_x, u, _t| dvector![(u[0] - 0.3).powi(2)]);
    let u = minimize_hamiltonian(&quad, &dvector![0.0], &dvector![1.0], 0.0, &cs);
    assert!((u[0] - 0.3).abs() < 1e-8);
}

#[test]
fn switching_time_sensitivity_examples() {
    let x = dvector![1.0, 1.0];
    let dn = covector(&x, dvector![0.0, 1.0], 0.0);
    let f = TangentVec::new(pt(x.clone()), dvector![1.0, 1.0]).unwrap();
    let d1 = TangentVec::new(pt(x.clone()), dvector![-2.0, 0.0]).unwrap();
    let d2 = TangentVec::new(pt(x.clone()), dvector![0.0, 1.0]).unwrap();
    assert_eq!(switching_time_sensitivity(&dn, &f, &d1).unwrap(), 0.0);
    assert_eq!(switching_time_sensitivity(&dn, &f, &d2).unwrap(), -1.0);
    let flat = TangentVec::new(pt(x), dvector![1.0, 0.0]).unwrap();
    assert!(matches!(switching_time_sensitivity(&dn, &flat, &d2), Err(HmpError::TangentialCrossing { .. })));
}

#[test]
fn compute_mu_examples() {
    let (q0, q1) = rate_modes();
    let id = Jump::identity();
    let c = ctx(TheoremVariant::TimeInvariant, &q0, &q1, &id, 0.0);
    assert!((compute_mu(&c, &dvector![-2.0, 2.0]).unwrap() - 2.0).abs() < 1e-14);

    let same = ctx(TheoremVariant::TimeInvariant, &q0, &q0, &id, 0.0);
    assert_eq!(compute_mu(&same, &dvector![0.7, -1.3]).unwrap(), 0.0);

    let timed = Jump::new(|x, t| dvector![x[0] + 0.3 * t, x[1]], true)
        .with_jacobian(|_, _| DMatrix::identity(2, 2))
        .with_time_derivative(|_, _| dvector![0.3, 0.0]);
    let c4 = ctx(TheoremVariant::TimeVaryingJump, &q0, &q1, &timed, 0.0);
    let p_plus = dvector![-2.0, 2.0];
    assert!((c4.time_pairing(&p_plus) + 0.6).abs() < 1e-14);
    assert!((compute_mu(&c4, &p_plus).unwrap() - 2.6).abs() < 1e-14);
}

#[test]
fn compute_mu_rejects_tangential_crossing() {
    let (q0, q1) = rate_modes();
    let id = Jump::identity();
    let mut c = ctx(TheoremVariant::TimeInvariant, &q0, &q1, &id, 0.0);
    c.covector = covector(&c.x_minus, dvector![1.0, 0.0], 0.0);
    c.u_minus = dvector![0.0];
    assert!(matches!(compute_mu(&c, &dvector![-2.0, 2.0]), Err(HmpError::TangentialCrossing { .. })));
}

#[test]
fn backward_jump_examples() {
    let (q0, q1) = rate_modes();
    let id = Jump::identity();
    let c = ctx(TheoremVariant::TimeInvariant, &q0, &q1, &id, 0.0);
    assert_eq!(adjoint_jump_backward(&c, &dvector![-2.0, 2.0], 2.0).unwrap(), dvector![-2.0, 4.0]);
    assert_eq!(adjoint_jump_backward(&c, &dvector![0.4, -0.1], 0.0).unwrap(), dvector![0.4, -0.1]);
    let double = Jump::new(|x, _| x * 2.0, false).with_jacobian(|_, _| DMatrix::identity(2, 2) * 2.0);
    let c2 = ctx(TheoremVariant::TimeInvariant, &q0, &q1, &double, 0.0);
    assert_eq!(adjoint_jump_backward(&c2, &dvector![1.0, 0.0], 0.0).unwrap(), dvector![2.0, 0.0]);
}

#[test]
fn forward_jump_examples() {
    let (q0, q1) = rate_modes();
    let id = Jump::identity();
    let c = ctx(TheoremVariant::TimeInvariant, &q0, &q1, &id, 0.0);
    let (p_plus, mu) = adjoint_jump_forward(&c, &dvector![-2.0, 4.0]).unwrap();
    assert!((p_plus - dvector![-2.0, 2.0]).amax() < 1e-14);
    assert!((mu - 2.0).abs() < 1e-14);

    let same = ctx(TheoremVariant::TimeInvariant, &q0, &q0, &id, 0.0);
    let (p_plus, mu) = adjoint_jump_forward(&same, &dvector![0.3, -0.8]).unwrap();
    assert!((p_plus - dvector![0.3, -0.8]).amax() < 1e-15 && mu.abs() < 1e-15);

    let project = Jump::new(|x, _| dvector![x[0], 0.0], false)
        .with_jacobian(|_, _| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    let cp = ctx(TheoremVariant::TimeInvariant, &q0, &q1, &project, 0.0);
    assert!(matches!(adjoint_jump_forward(&cp, &dvector![1.0, 1.0]), Err(HmpError::NonInvertibleJump { .. })));
    assert!(matches!(
        adjoint_jump_forward_with_mu(&cp, &dvector![1.0, 1.0], 0.5),
        Err(HmpError::NonInvertibleJump { .. })
    ));
}

#[test]
fn expected_jump_examples() {
    for mu in [-3.0, 0.0, 2.0] {
        assert_eq!(hamiltonian_jump_expected(TheoremVariant::TimeInvariant, mu, 0.0, 0.0, None).unwrap(), 0.0);
    }
    let tvg = hamiltonian_jump_expected(TheoremVariant::TimeVaryingGuard, 2.0, -0.5, 0.0, None).unwrap();
    assert!((tvg - 1.0).abs() < 1e-15);
    let tvj = hamiltonian_jump_expected(TheoremVariant::TimeVaryingJump, 2.6, 0.0, -0.6, None).unwrap();
    assert!((tvj - 0.6).abs() < 1e-15);
    let comb = hamiltonian_jump_expected(TheoremVariant::Combined, 2.0, 0.0, -0.6, Some(-0.5)).unwrap();
    assert!((comb - 1.6).abs() < 1e-15);
}

#[test]
fn expected_jump_rejects_inconsistent_inputs() {
    let e = hamiltonian_jump_expected(TheoremVariant::TimeInvariant, 1.0, -0.5, 0.0, None);
    assert!(matches!(e, Err(HmpError::VariantMismatch { .. })));
    let e = hamiltonian_jump_expected(TheoremVariant::TimeInvariant, 1.0, 0.0, 0.2, None);
    assert!(matches!(e, Err(HmpError::VariantMismatch { .. })));
    let e = hamiltonian_jump_expected(TheoremVariant::TimeVaryingGuard, 1.0, 0.0, 0.2, None);
    assert!(matches!(e, Err(HmpError::VariantMismatch { .. })));
}

/// EX2 under `u = 1` together with the costate `(-2, 4)` before and `(-2, 2)`
/// after the switching, obtained by hand.
fn ex2_solution() -> (HybridProblem, HybridTrajectory, AdjointTrajectory) {
    let problem = instantiate("EX2_rate_switch", &BTreeMap::new()).unwrap();
    let law = ConstantControl(dvector![1.0]);
    let laws: Vec<&dyn ControlLaw> = vec![&law];
    let traj = hybrid_flow(&problem, &laws, &FlowOptions::default()).unwrap();
    let adjoint = AdjointTrajectory {
        arcs: vec![
            vec![dvector![-2.0, 4.0]; traj.arcs[0].samples.len()],
            vec![dvector![-2.0, 2.0]; traj.arcs[1].samples.len()],
        ],
    };
    (problem, traj, adjoint)
}

#[test]
fn check_passes_on_ex2_solution() {
    let (problem, traj, adjoint) = ex2_solution();
    let report = check_trajectory(&problem, &traj, &adjoint, &Tolerances::default());
    assert!(report.pass, "{report}");
    assert!((report.switches[0].mu - 2.0).abs() < 1e-9);
    assert!(report.to_json().contains("\"pass\": true"));
}

#[test]
fn check_flags_perturbed_multiplier() {
    let (problem, mut traj, adjoint) = ex2_solution();
    traj.switches[0].mu = Some(2.1);
    let report = check_trajectory(&problem, &traj, &adjoint, &Tolerances::default());
    assert!(!report.pass);
    assert!((report.switches[0].dh_residual - 0.1).abs() < 1e-9);
    let failed = report.failed_conditions();
    assert!(failed.contains(&"hamiltonian-jump") && failed.contains(&"costate-jump"), "{failed:?}");
}

#[test]
fn check_flags_trivial_costate() {
    let (problem, traj, mut adjoint) = ex2_solution();
    for arc in &mut adjoint.arcs {
        for p in arc.iter_mut() {
            p.fill(0.0);
        }
    }
    let report = check_trajectory(&problem, &traj, &adjoint, &Tolerances::default());
    assert!(report.failed_conditions().contains(&"nontriviality"));
}

#[test]
fn check_flags_misaligned_costate() {
    let (problem, traj, mut adjoint) = ex2_solution();
    adjoint.arcs[0].pop();
    let report = check_trajectory(&problem, &traj, &adjoint, &Tolerances::default());
    assert!(!report.pass && report.failed_conditions().contains(&"alignment"));
}

#[test]
fn needle_examples_on_ex2() {
    let (problem, traj, _) = ex2_solution();
    let spec = NeedleSpec { t1: 0.5, u1: vec![-1.0], epsilon: 1e-4 };
    let v = needle_terminal_variation(&problem, &traj, &spec).unwrap();
    assert!((v.comps.clone() - dvector![-2.0, 0.0]).amax() < 1e-10);
    let cone = cone_nonnegativity(&problem, &traj, std::slice::from_ref(&spec), 1e-6);
    assert!(cone.pass && (cone.min_pairing - 4.0).abs() < 1e-9);

    let null = NeedleSpec { t1: 1.5, u1: vec![1.0], epsilon: 1e-4 };
    let v = needle_terminal_variation(&problem, &traj, &null).unwrap();
    assert!(v.comps.amax() < 1e-14);

    let at_switch = NeedleSpec { t1: traj.switches[0].t, u1: vec![0.0], epsilon: 1e-4 };
    assert!(matches!(needle_terminal_variation(&problem, &traj, &at_switch), Err(HmpError::InvalidNeedle(_))));
    let outside = NeedleSpec { t1: 0.5, u1: vec![2.0], epsilon: 1e-4 };
    assert!(matches!(needle_terminal_variation(&problem, &traj, &outside), Err(HmpError::InvalidNeedle(_))));
}

#[test]
fn needle_matches_finite_differences_across_the_switch() {
    let (problem, traj, _) = ex2_solution();
    let spec = NeedleSpec { t1: 0.5, u1: vec![0.0], epsilon: 1e-4 };
    let v = needle_terminal_variation(&problem, &traj, &spec).unwrap();
    let fd = needle_fd_variation(&problem, &traj, &spec, (1e-3, 1e-4), None).unwrap();
    assert!((&v.comps - &fd).amax() / fd.amax().max(1.0) < 1e-3, "{v:?} vs {fd}");
}

#[test]
fn suboptimal_ex2_has_cone_violation() {
    let problem = instantiate("EX2_rate_switch", &BTreeMap::new()).unwrap();
    let law = ConstantControl(dvector![-1.0]);
    let laws: Vec<&dyn ControlLaw> = vec![&law];
    let traj = hybrid_flow(&problem, &laws, &FlowOptions::default()).unwrap();
    let specs = random_needles(&problem, &traj, 50, 7, 1e-3);
    let cone = cone_nonnegativity(&problem, &traj, &specs, 1e-6);
    assert!(!cone.pass && cone.violations > 0 && cone.min_pairing < 0.0);
}

/// Two constant modes, a linear jump `x -> A x (+ d t)` and a guard normal
/// drawn from the strategy inputs.
struct Linear {
    before: Mode,
    after: Mode,
    jump: Jump,
    x: Vector,
    dn: Vector,
}

impl Linear {
    fn new(f0: Vector, f1: Vector, a: DMatrix<f64>, d: Vector, dn: Vector) -> Self {
        let (a2, d2) = (a.clone(), d.clone());
        let tv = d.amax() > 0.0;
        Self {
            before: Mode::new("q0", move |_x, _u, _t| f0.clone()),
            after: Mode::new("q1", move |_x, _u, _t| f1.clone()),
            jump: Jump::new(move |x, t| &a * x + &d * t, tv)
                .with_jacobian(move |_, _| a2.clone())
                .with_time_derivative(move |_, _| d2.clone()),
            x: dvector![0.3, -0.2],
            dn,
        }
    }

    fn ctx(&self, variant: TheoremVariant, scale: f64, dn_t: f64) -> SwitchContext<'_> {
        SwitchContext {
            variant,
            before: &self.before,
            after: &self.after,
            jump: &self.jump,
            t: 0.7,
            x_minus: self.x.clone(),
            x_plus: self.jump.apply(&self.x, 0.7),
            u_minus: dvector![0.0],
            u_plus: dvector![0.0],
            covector: covector(&self.x, &self.dn * scale, dn_t * scale),
            dstar_t_v: None,
        }
    }
}

fn vec2() -> impl Strategy<Value = Vector> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| dvector![a, b])
}

fn well_conditioned() -> impl Strategy<Value = DMatrix<f64>> {
    prop::array::uniform4(-0.3..0.3f64)
        .prop_map(|e| DMatrix::identity(2, 2) + DMatrix::from_row_slice(2, 2, &e))
}

fn transversal_case() -> impl Strategy<Value = (Vector, Vector, DMatrix<f64>, Vector, Vector, f64)> {
    (vec2(), vec2(), well_conditioned(), vec2(), vec2(), -0.5..0.5f64)
        .prop_filter("transversal", |(f0, _, _, _, dn, dn_t)| (dn.dot(f0) + dn_t).abs() > 0.2 && dn.dot(f0).abs() > 0.2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_covariance((f0, f1, a, _d, dn, dn_t) in transversal_case(), p in vec2(), c in prop_oneof![0.1..10.0f64, -10.0..-0.1f64]) {
        let lin = Linear::new(f0, f1, a, dvector![0.0, 0.0], dn);
        for variant in [TheoremVariant::TimeInvariant, TheoremVariant::TimeVaryingGuard] {
            let t_part = if variant.uses_guard_time() { dn_t } else { 0.0 };
            let base = lin.ctx(variant, 1.0, t_part);
            let scaled = lin.ctx(variant, c, t_part);
            let mu = compute_mu(&base, &p).unwrap();
            let mu_c = compute_mu(&scaled, &p).unwrap();
            prop_assert!((mu_c * c - mu).abs() <= 1e-10 * (1.0 + mu.abs()));
            let pm = adjoint_jump_backward(&base, &p, mu).unwrap();
            let pm_c = adjoint_jump_backward(&scaled, &p, mu_c).unwrap();
            prop_assert!((&pm - &pm_c).amax() <= 1e-10 * (1.0 + pm.amax()));
            let e = expected_jump_for(&base, &p, mu).unwrap();
            let e_c = expected_jump_for(&scaled, &p, mu_c).unwrap();
            prop_assert!((e - e_c).abs() <= 1e-10 * (1.0 + e.abs()));
        }
    }

    #[test]
    fn variant_reductions((f0, f1, a, _d, dn, _t) in transversal_case(), p in vec2()) {
        let lin = Linear::new(f0, f1, a, dvector![0.0, 0.0], dn);
        let ti = lin.ctx(TheoremVariant::TimeInvariant, 1.0, 0.0);
        let mu = compute_mu(&ti, &p).unwrap();
        let pm = adjoint_jump_backward(&ti, &p, mu).unwrap();
        let e = expected_jump_for(&ti, &p, mu).unwrap();
        for variant in [TheoremVariant::TimeVaryingGuard, TheoremVariant::TimeVaryingJump, TheoremVariant::Combined] {
            let other = lin.ctx(variant, 1.0, 0.0);
            let mu_v = compute_mu(&other, &p).unwrap();
            prop_assert_eq!(mu_v, mu);
            prop_assert_eq!(adjoint_jump_backward(&other, &p, mu_v).unwrap(), pm.clone());
            prop_assert_eq!(expected_jump_for(&other, &p, mu_v).unwrap(), e);
        }
    }

    #[test]
    fn jump_condition_holds_by_construction((f0, f1, a, d, dn, dn_t) in transversal_case(), p in vec2()) {
        let lin = Linear::new(f0, f1, a, d, dn);
        for variant in [TheoremVariant::TimeVaryingJump, TheoremVariant::Combined] {
            let c = lin.ctx(variant, 1.0, dn_t);
            let mu = compute_mu(&c, &p).unwrap();
            let pm = adjoint_jump_backward(&c, &p, mu).unwrap();
            let measured = c.measured_jump(&pm, &p);
            let expected = expected_jump_for(&c, &p, mu).unwrap();
            prop_assert!((measured - expected).abs() <= 1e-10 * (1.0 + measured.abs()));
        }
    }

    #[test]
    fn forward_inverts_backward((f0, f1, a, d, dn, dn_t) in transversal_case(), p in vec2()) {
        let lin = Linear::new(f0, f1, a, d, dn);
        for variant in [TheoremVariant::TimeInvariant, TheoremVariant::TimeVaryingGuard, TheoremVariant::TimeVaryingJump, TheoremVariant::Combined] {
            let t_part = if variant.uses_guard_time() { dn_t } else { 0.0 };
            let c = lin.ctx(variant, 1.0, t_part);
            let mu = compute_mu(&c, &p).unwrap();
            let pm = adjoint_jump_backward(&c, &p, mu).unwrap();
            let (pp, mu_f) = adjoint_jump_forward(&c, &pm).unwrap();
            prop_assert!((&pp - &p).amax() <= 1e-12 * (1.0 + p.amax() + pm.amax()), "{pp} vs {p}");
            prop_assert!((mu_f - mu).abs() <= 1e-12 * (1.0 + mu.abs() + pm.amax()));
            let pp2 = adjoint_jump_forward_with_mu(&c, &pm, mu).unwrap();
            prop_assert!((&pp2 - &p).amax() <= 1e-12 * (1.0 + p.amax() + pm.amax()));
        }
    }
}
