use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::dvector;

use super::*;
use crate::model::instantiate;

fn problem(name: &str) -> HybridProblem {
    instantiate(name, &BTreeMap::new()).unwrap()
}

/// Hand solution of EX2: `u = 1` throughout, the costate is constant on each
/// arc, `p(tf) = dh(2, 3) = (-2, 2)` and the jump adds `mu dN = (0, 2)`.
fn ex2_star() -> ShootingState {
    ShootingState::new(vec![-2.0, 4.0], vec![1.0], vec![2.0])
}

#[test]
fn ex2_hand_solution_has_zero_residual() {
    let p = problem("EX2_rate_switch");
    let shot = shoot(&p, &ex2_star(), 1e-4, false).unwrap();
    assert!(shot.residual.norm_inf() <= 1e-8, "{:?}", shot.residual);
    assert!((shot.trajectory.final_state() - dvector![2.0, 3.0]).amax() < 1e-12);
}

#[test]
fn perturbed_multiplier_moves_jump_and_terminal_residuals() {
    let p = problem("EX2_rate_switch");
    let mut z = ex2_star();
    z.mus[0] = 2.1;
    let r = shooting_residual(&p, &z).unwrap();
    assert!(r.guards[0].abs() < 1e-12);
    assert!((r.hjumps[0] - 0.2).abs() < 1e-12, "{r:?}");
    assert!(r.terminal[0].abs() < 1e-12 && (r.terminal[1] + 0.1).abs() < 1e-12, "{r:?}");
}

#[test]
fn early_switch_time_shows_in_guard_residual() {
    let p = problem("EX2_rate_switch");
    let mut z = ex2_star();
    z.switch_times[0] = 0.9;
    let r = shooting_residual(&p, &z).unwrap();
    assert!((r.guards[0] + 0.1).abs() < 1e-12, "{r:?}");
}

#[test]
fn inadmissible_states_are_rejected() {
    let p = problem("EX2_rate_switch");
    let late = ShootingState::new(vec![-1.0, 1.0], vec![2.5], vec![0.0]);
    assert!(matches!(solve(&p, &late, &SolverOptions::default()), Err(SolverError::Inadmissible(_))));
    let short = ShootingState::new(vec![-1.0], vec![0.8], vec![0.0]);
    assert!(matches!(shooting_residual(&p, &short), Err(SolverError::Inadmissible(_))));
    let five = problem("EX5_three_mode");
    let unordered = ShootingState::new(vec![0.0, 0.0], vec![1.5, 1.0], vec![0.0, 0.0]);
    assert!(matches!(shooting_residual(&five, &unordered), Err(SolverError::Inadmissible(_))));
}

#[test]
fn ex2_converges_from_documented_guess() {
    let p = problem("EX2_rate_switch");
    let start = Instant::now();
    let sol = solve(&p, p.hints.guess.as_ref().unwrap(), &SolverOptions::default()).unwrap();
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert!(sol.iterations <= 30);
    let z = &sol.state;
    assert!((z.p0[0] + 2.0).abs() < 1e-6 && (z.p0[1] - 4.0).abs() < 1e-6, "{z:?}");
    assert!((z.switch_times[0] - 1.0).abs() < 1e-6 && (z.mus[0] - 2.0).abs() < 1e-6);
    assert!((sol.cost(&p) - 2.0).abs() < 1e-6);
    assert!(sol.report.pass, "{}", sol.report);
}

#[test]
fn eliminated_multipliers_reach_the_same_solution() {
    let p = problem("EX2_rate_switch");
    let opts = SolverOptions { eliminate_mu: true, ..Default::default() };
    let sol = solve(&p, p.hints.guess.as_ref().unwrap(), &opts).unwrap();
    assert!((sol.state.mus[0] - 2.0).abs() < 1e-6 && (sol.state.p0[1] - 4.0).abs() < 1e-6, "{:?}", sol.state);
    assert!(sol.residual.hjumps.is_empty() && sol.report.pass);
}

#[test]
fn lqr_single_mode() {
    let p = problem("LQR1_single_mode");
    let sol = solve(&p, p.hints.guess.as_ref().unwrap(), &SolverOptions::default()).unwrap();
    assert!((sol.state.p0[0] - 1.0).abs() < 1e-6);
    assert!((sol.cost(&p) - 0.25).abs() < 1e-9);
    assert!(sol.trajectory.arcs[0].samples.iter().all(|s| s.u[0] == -1.0));
    assert!(sol.report.pass, "{}", sol.report);
}

#[test]
fn single_iteration_budget_fails_distinctly() {
    let p = problem("EX2_rate_switch");
    let opts = SolverOptions { max_iter: 1, ..Default::default() };
    let err = solve(&p, p.hints.guess.as_ref().unwrap(), &opts).unwrap_err();
    assert_eq!(err.class(), "max-iterations");
}

#[test]
fn oracle_lqr_is_exhaustive_and_exact() {
    let p = problem("LQR1_single_mode");
    let opts = OracleOptions { segments: 4, ..Default::default() };
    let o = direct_oracle(&p, &opts).unwrap();
    assert!(o.exhaustive);
    assert!((o.cost - 0.25).abs() < 1e-6, "{}", o.cost);
    assert!(o.controls.iter().all(|u| u[0] == -1.0));
    assert!((o.cost_gradient_x0[0] - 1.0).abs() < 5e-3);
}

#[test]
fn oracle_budget_is_enforced() {
    let p = problem("LQR1_single_mode");
    for opts in [
        OracleOptions { segments: 100, ..Default::default() },
        OracleOptions { grid_points: 22, ..Default::default() },
        OracleOptions { segments: 0, ..Default::default() },
    ] {
        assert!(matches!(direct_oracle(&p, &opts), Err(SolverError::Budget(_))));
    }
}
