//! Plain-text trajectory format.
//!
//! Columns are `t, mode, x1..xn, u1..um, p1..pn, H`. The costate and
//! Hamiltonian columns are empty when no costate is attached. A switching at
//! `t_i` appears as two consecutive rows with equal time: the pre-jump state
//! at the end of one mode, then the post-jump state at the start of the next.

use thiserror::Error;

use super::{AdjointTrajectory, ArcSample, HybridTrajectory, SwitchRecord, TrajectoryArc};
use crate::error::GeometryError;
use crate::geometry::normal_covector;
use crate::model::{HybridProblem, Vector};

pub const SCHEMA_COMMENT: &str = "# hmp trajectory v1: one row per sample; a switching at t_i is a pair of rows with equal t \
(pre-jump row, then post-jump row of the next mode); p and H columns are empty when no costate is attached";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CsvError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trajectory inconsistent with problem: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn header(n: usize, m: usize) -> String {
    let mut cols = vec!["t".to_string(), "mode".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=m).map(|i| format!("u{i}")));
    cols.extend((1..=n).map(|i| format!("p{i}")));
    cols.push("H".to_string());
    cols.join(",")
}

pub fn write_trajectory_csv(
    problem: &HybridProblem,
    traj: &HybridTrajectory,
    adjoint: Option<&AdjointTrajectory>,
) -> String {
    let n = problem.state_dim();
    let m = problem.control_dim();
    let mut out = String::new();
    out.push_str(SCHEMA_COMMENT);
    out.push('\n');
    out.push_str(&header(n, m));
    out.push('\n');
    for (ai, arc) in traj.arcs.iter().enumerate() {
        let mode = &problem.modes[arc.mode];
        for (k, s) in arc.samples.iter().enumerate() {
            let mut fields = vec![fmt_f64(s.t), arc.mode.to_string()];
            fields.extend(s.x.iter().map(|v| fmt_f64(*v)));
            fields.extend(s.u.iter().map(|v| fmt_f64(*v)));
            match adjoint {
                Some(adj) => {
                    let p = &adj.arcs[ai][k];
                    fields.extend(p.iter().map(|v| fmt_f64(*v)));
                    fields.push(fmt_f64(p.dot(&mode.eval(&s.x, &s.u, s.t))));
                }
                None => fields.extend(std::iter::repeat_n(String::new(), n + 1)),
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

fn parse_num(tok: &str, line: usize, col: &str) -> Result<f64, CsvError> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| CsvError::Malformed { line, reason: format!("column {col}: cannot parse '{tok}'") })?;
    if !v.is_finite() {
        return Err(CsvError::Malformed { line, reason: format!("column {col}: non-finite value") });
    }
    Ok(v)
}

/// Parses a trajectory written by [`write_trajectory_csv`]. Switch records are
/// rebuilt from the duplicated-time row pairs; multipliers are left unset.
pub fn read_trajectory_csv(
    problem: &HybridProblem,
    text: &str,
) -> Result<(HybridTrajectory, Option<AdjointTrajectory>), CsvError> {
    let n = problem.state_dim();
    let m = problem.control_dim();
    let expected_header = header(n, m);
    let width = 2 + n + m + n + 1;
    let mut header_seen = false;
    let mut rows: Vec<(usize, f64, usize, Vector, Vector, Option<Vector>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !header_seen {
            if trimmed != expected_header {
                return Err(CsvError::Malformed { line, reason: format!("expected header '{expected_header}'") });
            }
            header_seen = true;
            continue;
        }
        let toks: Vec<&str> = trimmed.split(',').collect();
        if toks.len() != width {
            return Err(CsvError::Malformed { line, reason: format!("expected {width} columns, found {}", toks.len()) });
        }
        let t = parse_num(toks[0], line, "t")?;
        let mode: usize = toks[1]
            .trim()
            .parse()
            .map_err(|_| CsvError::Malformed { line, reason: format!("bad mode '{}'", toks[1]) })?;
        let x = toks[2..2 + n].iter().map(|s| parse_num(s, line, "x")).collect::<Result<Vec<_>, _>>()?;
        let u = toks[2 + n..2 + n + m].iter().map(|s| parse_num(s, line, "u")).collect::<Result<Vec<_>, _>>()?;
        let p_toks = &toks[2 + n + m..2 + 2 * n + m];
        let p = if p_toks.iter().all(|s| s.trim().is_empty()) {
            None
        } else {
            Some(Vector::from_vec(p_toks.iter().map(|s| parse_num(s, line, "p")).collect::<Result<Vec<_>, _>>()?))
        };
        rows.push((line, t, mode, Vector::from_vec(x), Vector::from_vec(u), p));
    }
    if !header_seen {
        return Err(CsvError::Malformed { line: 0, reason: "missing header".into() });
    }
    if rows.is_empty() {
        return Err(CsvError::Malformed { line: 0, reason: "no samples".into() });
    }
    let has_p = rows[0].5.is_some();
    if rows.iter().any(|r| r.5.is_some() != has_p) {
        return Err(CsvError::Inconsistent("costate columns filled on some rows only".into()));
    }

    let mut arcs: Vec<TrajectoryArc> = Vec::new();
    let mut adj: Vec<Vec<Vector>> = Vec::new();
    let mut current: Vec<ArcSample> = Vec::new();
    let mut current_p: Vec<Vector> = Vec::new();
    let mut current_mode = rows[0].2;
    if current_mode != 0 {
        return Err(CsvError::Inconsistent("trajectory must start in mode 0".into()));
    }
    let mut flush = |mode: usize, samples: Vec<ArcSample>, ps: Vec<Vector>| -> Result<(), CsvError> {
        if mode >= problem.modes.len() {
            return Err(CsvError::Inconsistent(format!("mode {mode} does not exist")));
        }
        arcs.push(TrajectoryArc::from_samples(mode, &problem.modes[mode], samples));
        adj.push(ps);
        Ok(())
    };
    for (line, t, mode, x, u, p) in rows {
        if mode != current_mode {
            if mode != current_mode + 1 {
                return Err(CsvError::Malformed { line, reason: format!("mode jumps from {current_mode} to {mode}") });
            }
            flush(current_mode, std::mem::take(&mut current), std::mem::take(&mut current_p))?;
            current_mode = mode;
        } else if let Some(prev) = current.last() {
            if t <= prev.t {
                return Err(CsvError::Malformed { line, reason: "times must increase within a mode".into() });
            }
        }
        current.push(ArcSample { t, x, u });
        if let Some(p) = p {
            current_p.push(p);
        }
    }
    flush(current_mode, current, current_p)?;

    let t_end = arcs.last().map(|a| a.t_end).unwrap_or(f64::NAN);
    if (t_end - problem.tf).abs() > 1e-12 * (1.0 + problem.tf.abs()) {
        return Err(CsvError::Inconsistent(format!("trajectory ends at {t_end}, expected {}", problem.tf)));
    }
    if (arcs[0].t_start - problem.t0).abs() > 1e-12 * (1.0 + problem.t0.abs()) {
        return Err(CsvError::Inconsistent("trajectory does not start at t0".into()));
    }

    let mut switches = Vec::with_capacity(arcs.len().saturating_sub(1));
    for i in 0..arcs.len() - 1 {
        let (a, b) = (&arcs[i], &arcs[i + 1]);
        if a.t_end != b.t_start {
            return Err(CsvError::Inconsistent(format!("switch {i}: pre/post rows have different times")));
        }
        let x_minus = a.final_state().clone();
        let (gx, gt) = problem.guards[i].gradient(&x_minus, a.t_end);
        let dn = normal_covector(&gx, gt, &problem.metric, &problem.point(x_minus.clone()), problem.normalize_normals)?;
        switches.push(SwitchRecord {
            index: i,
            t: a.t_end,
            x_minus,
            x_plus: b.initial_state().clone(),
            dn,
            mu: None,
            dh_expected: None,
            dh_measured: None,
        });
    }
    let traj = HybridTrajectory { chart: problem.chart, arcs, switches };
    let adjoint = has_p.then_some(AdjointTrajectory { arcs: adj });
    Ok((traj, adjoint))
}
