use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::HybridProblem;

/// Thresholds applied by the trajectory checker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Pointwise minimization gap, in Hamiltonian units.
    pub min_gap: f64,
    /// Adjoint ODE residual after backward re-integration.
    pub ode: f64,
    /// Terminal condition `|p(tf) - dh|`.
    pub transversality: f64,
    /// `|dH measured - dH expected|` at each switching.
    pub hjump: f64,
    /// Guard value at the pre-jump state.
    pub guard: f64,
    /// Pre-jump costate reconstruction residual.
    pub reconstruction: f64,
    /// Lower bound for `max |p|`.
    pub nontrivial: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            min_gap: 1e-6,
            ode: 1e-6,
            transversality: 1e-8,
            hjump: 1e-6,
            guard: 1e-8,
            reconstruction: 1e-6,
            nontrivial: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn all_positive(&self) -> bool {
        [self.min_gap, self.ode, self.transversality, self.hjump, self.guard, self.reconstruction, self.nontrivial]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcCheck {
    pub arc: usize,
    pub mode: String,
    pub t_start: f64,
    pub t_end: f64,
    pub ode_residual: f64,
    pub max_min_gap: f64,
    pub min_min_gap: f64,
    pub worst_gap_time: f64,
    pub autonomous: bool,
    /// `max |H(t) - H(t_start)|` along the arc (informational).
    pub h_variation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchCheck {
    pub index: usize,
    pub t: f64,
    pub guard_residual: f64,
    pub mu: f64,
    pub reconstruction_residual: f64,
    pub dh_expected: f64,
    pub dh_measured: f64,
    pub dh_residual: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub condition: String,
    pub detail: String,
}

/// Outcome of [`super::check_trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmpReport {
    pub problem: String,
    pub variant: String,
    pub tolerances: Tolerances,
    pub arcs: Vec<ArcCheck>,
    pub transversality: f64,
    pub switches: Vec<SwitchCheck>,
    pub max_costate: f64,
    pub failures: Vec<Failure>,
    pub pass: bool,
}

impl HmpReport {
    pub(crate) fn new(problem: &HybridProblem, tol: &Tolerances) -> Self {
        Self {
            problem: problem.name.clone(),
            variant: problem.variant.to_string(),
            tolerances: tol.clone(),
            arcs: Vec::new(),
            transversality: f64::NAN,
            switches: Vec::new(),
            max_costate: 0.0,
            failures: Vec::new(),
            pass: false,
        }
    }

    pub(crate) fn fail(&mut self, condition: &str, detail: impl Into<String>) {
        self.failures.push(Failure { condition: condition.to_string(), detail: detail.into() });
    }

    /// Derives the failure list and the pass flag from the recorded residuals.
    pub(crate) fn finish(&mut self) {
        let tol = self.tolerances.clone();
        let mut failures = std::mem::take(&mut self.failures);
        let mut push = |c: &str, d: String| failures.push(Failure { condition: c.to_string(), detail: d });
        for a in &self.arcs {
            if !(a.max_min_gap <= tol.min_gap) {
                push("minimization", format!("arc {}: gap {:e} at t = {}", a.arc, a.max_min_gap, a.worst_gap_time));
            }
            if !(a.ode_residual <= tol.ode) {
                push("adjoint-ode", format!("arc {}: residual {:e}", a.arc, a.ode_residual));
            }
        }
        if !(self.transversality <= tol.transversality) {
            push("transversality", format!("|p(tf) - dh| = {:e}", self.transversality));
        }
        for s in &self.switches {
            if let Some(e) = &s.error {
                push("switch", format!("switch {}: {e}", s.index));
                continue;
            }
            if !(s.guard_residual <= tol.guard) {
                push("guard", format!("switch {}: |gamma| = {:e}", s.index, s.guard_residual));
            }
            if !(s.reconstruction_residual <= tol.reconstruction) {
                push("costate-jump", format!("switch {}: residual {:e}", s.index, s.reconstruction_residual));
            }
            if !(s.dh_residual <= tol.hjump) {
                push("hamiltonian-jump", format!("switch {}: |dH - expected| = {:e}", s.index, s.dh_residual));
            }
        }
        if !(self.max_costate > tol.nontrivial) {
            push("nontriviality", format!("max |p| = {:e}", self.max_costate));
        }
        self.failures = failures;
        self.pass = self.failures.is_empty();
    }

    pub fn failed_conditions(&self) -> Vec<&str> {
        let mut v: Vec<&str> = Vec::new();
        for f in &self.failures {
            if !v.contains(&f.condition.as_str()) {
                v.push(&f.condition);
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for HmpReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem: {}", self.problem)?;
        writeln!(f, "variant: {}", self.variant)?;
        writeln!(f, "pass: {}", self.pass)?;
        writeln!(f, "transversality: {:.3e}", self.transversality)?;
        writeln!(f, "max_costate: {:.6e}", self.max_costate)?;
        writeln!(f, "arcs:")?;
        writeln!(f, "  {:>3} {:>6} {:>12} {:>12} {:>11} {:>11} {:>11}", "arc", "mode", "t_start", "t_end", "ode", "gap", "dH_arc")?;
        for a in &self.arcs {
            writeln!(
                f,
                "  {:>3} {:>6} {:>12.8} {:>12.8} {:>11.3e} {:>11.3e} {:>11.3e}",
                a.arc, a.mode, a.t_start, a.t_end, a.ode_residual, a.max_min_gap, a.h_variation
            )?;
        }
        writeln!(f, "switches:")?;
        writeln!(
            f,
            "  {:>3} {:>12} {:>11} {:>14} {:>11} {:>14} {:>14} {:>11}",
            "i", "t", "guard", "mu", "recon", "dH_expected", "dH_measured", "dH_resid"
        )?;
        for s in &self.switches {
            writeln!(
                f,
                "  {:>3} {:>12.8} {:>11.3e} {:>14.8} {:>11.3e} {:>14.8} {:>14.8} {:>11.3e}",
                s.index, s.t, s.guard_residual, s.mu, s.reconstruction_residual, s.dh_expected, s.dh_measured, s.dh_residual
            )?;
        }
        if !self.failures.is_empty() {
            writeln!(f, "failures:")?;
            for fl in &self.failures {
                writeln!(f, "  {}: {}", fl.condition, fl.detail)?;
            }
        }
        Ok(())
    }
}
