//! Direct oracles: brute-force piecewise-constant control search, and the
//! value function sampled on a switching manifold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::hmp::{SurfaceChart, SurfaceSample, ValueSurface};
use crate::integrate::{hybrid_flow, ControlLaw, FlowOptions, HybridTrajectory, PiecewiseConstant};
use crate::model::{HybridProblem, Vector};
use crate::optim::{bfgs_box, golden_section, BfgsOptions};

/// Largest number of control segments per arc.
pub const MAX_SEGMENTS: usize = 8;
/// Largest number of grid values per control coordinate.
pub const MAX_GRID_POINTS: usize = 21;
/// Largest control dimension.
pub const MAX_CONTROL_DIM: usize = 2;
/// Grid combinations up to which the search is exhaustive.
const EXHAUSTIVE_LIMIT: f64 = 1e6;
/// Coarse integration steps per control segment during the grid search.
const SEARCH_STEPS_PER_SEGMENT: usize = 8;
const MAX_SWEEPS: usize = 50;
const REFINE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleOptions {
    /// Control segments per arc; the horizon is cut into `segments * (L + 1)`
    /// equal pieces.
    pub segments: usize,
    /// Grid values per control coordinate.
    pub grid_points: usize,
    /// Random starts of the coordinate search.
    pub restarts: usize,
    pub seed: u64,
    /// Fine integration step; `None` uses the problem default.
    pub step: Option<f64>,
    /// Central-difference step of the cost gradient with respect to `x0`.
    pub gradient_step: f64,
    /// Quasi-Newton polish after the grid refinement.
    pub polish: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { segments: 8, grid_points: 21, restarts: 3, seed: 0, step: None, gradient_step: 1e-5, polish: true }
    }
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Segment boundaries from `t0` to `tf`.
    pub segment_times: Vec<f64>,
    /// Control value on each segment.
    pub controls: Vec<Vector>,
    pub cost: f64,
    pub cost_gradient_x0: Vector,
    pub trajectory: HybridTrajectory,
    /// Whether every grid combination was evaluated.
    pub exhaustive: bool,
    pub evaluations: usize,
}

impl OracleSolution {
    pub fn flat_controls(&self) -> Vector {
        let m = self.controls.first().map_or(0, |c| c.len());
        Vector::from_iterator(self.controls.len() * m, self.controls.iter().flat_map(|c| c.iter().copied()))
    }
}

/// Terminal cost as a function of the flattened segment controls.
/// Failed simulations and missed switchings cost `+inf`.
struct Objective {
    problem: HybridProblem,
    segments: usize,
    m: usize,
    step: f64,
    evaluations: std::sync::atomic::AtomicUsize,
}

impl Objective {
    fn new(problem: &HybridProblem, segments: usize, step: f64) -> Self {
        Self {
            problem: problem.clone(),
            segments,
            m: problem.control_dim(),
            step,
            evaluations: Default::default(),
        }
    }

    fn with_x0(&self, x0: Vector, step: f64) -> Self {
        let mut o = Self::new(&self.problem, self.segments, step);
        o.problem.x0 = x0;
        o
    }

    fn law(&self, flat: &Vector) -> PiecewiseConstant {
        PiecewiseConstant {
            t0: self.problem.t0,
            t1: self.problem.tf,
            values: (0..self.segments).map(|k| flat.rows(k * self.m, self.m).into_owned()).collect(),
        }
    }

    fn simulate(&self, flat: &Vector) -> Option<HybridTrajectory> {
        self.evaluations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let law = self.law(flat);
        let laws: [&dyn ControlLaw; 1] = [&law];
        let opts = FlowOptions { step: Some(self.step), ..Default::default() };
        let traj = hybrid_flow(&self.problem, &laws, &opts).ok()?;
        (traj.switches.len() == self.problem.num_switches()).then_some(traj)
    }

    fn cost(&self, flat: &Vector) -> f64 {
        self.simulate(flat).map(|t| t.cost(&self.problem)).filter(|c| c.is_finite()).unwrap_or(f64::INFINITY)
    }

    fn count(&self) -> usize {
        self.evaluations.load(std::sync::atomic::Ordering::Relaxed)
    }
}

fn check_budget(problem: &HybridProblem, opts: &OracleOptions) -> Result<(), SolverError> {
    let m = problem.control_dim();
    if opts.segments == 0 || opts.segments > MAX_SEGMENTS {
        return Err(SolverError::Budget(format!("segments = {} outside 1..={MAX_SEGMENTS}", opts.segments)));
    }
    if opts.grid_points < 2 || opts.grid_points > MAX_GRID_POINTS {
        return Err(SolverError::Budget(format!("grid_points = {} outside 2..={MAX_GRID_POINTS}", opts.grid_points)));
    }
    if m == 0 || m > MAX_CONTROL_DIM {
        return Err(SolverError::Budget(format!("control dimension {m} outside 1..={MAX_CONTROL_DIM}")));
    }
    if !(opts.gradient_step > 0.0) {
        return Err(SolverError::Budget("gradient_step must be positive".into()));
    }
    Ok(())
}

/// Grid values of every flat coordinate.
fn flat_axes(problem: &HybridProblem, k: usize, g: usize) -> Vec<Vec<f64>> {
    let m = problem.control_dim();
    (0..k * m).map(|c| problem.control_set.axis_grid(c % m, g)).collect()
}

fn from_indices(axes: &[Vec<f64>], idx: &[usize]) -> Vector {
    Vector::from_iterator(axes.len(), axes.iter().zip(idx).map(|(a, &i)| a[i]))
}

/// Lowest cost with ties resolved toward the lower index.
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => a,
        std::cmp::Ordering::Greater => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

fn exhaustive(obj: &Objective, axes: &[Vec<f64>], total: usize) -> Vector {
    let decode = |mut flat: usize| {
        let mut idx = vec![0; axes.len()];
        for c in (0..axes.len()).rev() {
            idx[c] = flat % axes[c].len();
            flat /= axes[c].len();
        }
        idx
    };
    let (_, best) = (0..total)
        .into_par_iter()
        .map(|f| (obj.cost(&from_indices(axes, &decode(f))), f))
        .reduce(|| (f64::INFINITY, usize::MAX), better);
    from_indices(axes, &decode(if best == usize::MAX { 0 } else { best }))
}

fn coordinate_descent(obj: &Objective, axes: &[Vec<f64>], mut idx: Vec<usize>) -> (f64, Vec<usize>) {
    let mut best = obj.cost(&from_indices(axes, &idx));
    for _ in 0..MAX_SWEEPS {
        let mut improved = false;
        for c in 0..axes.len() {
            let current = idx[c];
            let mut choice = current;
            for v in 0..axes[c].len() {
                if v == current {
                    continue;
                }
                idx[c] = v;
                let val = obj.cost(&from_indices(axes, &idx));
                if val < best {
                    best = val;
                    choice = v;
                    improved = true;
                }
            }
            idx[c] = choice;
        }
        if !improved {
            break;
        }
    }
    (best, idx)
}

/// Golden-section refinement of each coordinate within one grid cell.
fn refine(obj: &Objective, lower: &Vector, upper: &Vector, cell: &Vector, mut x: Vector) -> (Vector, f64) {
    let mut fx = obj.cost(&x);
    for c in 0..x.len() {
        if cell[c] <= 0.0 {
            continue;
        }
        let a = (x[c] - cell[c]).max(lower[c]);
        let b = (x[c] + cell[c]).min(upper[c]);
        let mut trial = x.clone();
        let (s, v) = golden_section(
            |s| {
                trial[c] = s;
                obj.cost(&trial)
            },
            a,
            b,
            REFINE_TOL,
        );
        if v < fx {
            x[c] = s;
            fx = v;
        }
    }
    (x, fx)
}

fn bounds(problem: &HybridProblem, k: usize) -> (Vector, Vector) {
    let m = problem.control_dim();
    let cs = &problem.control_set;
    (
        Vector::from_iterator(k * m, (0..k * m).map(|c| cs.lower[c % m])),
        Vector::from_iterator(k * m, (0..k * m).map(|c| cs.upper[c % m])),
    )
}

fn polish(obj: &Objective, x: &Vector, lower: &Vector, upper: &Vector) -> (Vector, f64) {
    let f = |z: &Vector| obj.cost(z);
    bfgs_box(&f, x, lower, upper, &BfgsOptions::default())
}

/// Searches piecewise-constant controls on equal segments of the horizon for
/// the lowest terminal cost, then estimates the gradient of the optimal cost
/// with respect to the initial state by central differences, re-optimizing
/// from the best controls at each perturbed initial state.
pub fn direct_oracle(problem: &HybridProblem, opts: &OracleOptions) -> Result<OracleSolution, SolverError> {
    check_budget(problem, opts)?;
    let l = problem.num_switches();
    let k = opts.segments * (l + 1);
    let m = problem.control_dim();
    let fine_step = opts.step.unwrap_or_else(|| problem.default_step());
    let coarse_step = fine_step.max(problem.horizon() / (k * SEARCH_STEPS_PER_SEGMENT) as f64);
    let coarse = Objective::new(problem, k, coarse_step);
    let fine = Objective::new(problem, k, fine_step);
    let axes = flat_axes(problem, k, opts.grid_points);
    let combos: f64 = axes.iter().map(|a| a.len() as f64).product();
    let is_exhaustive = combos <= EXHAUSTIVE_LIMIT;
    let start = if is_exhaustive {
        exhaustive(&coarse, &axes, combos as usize)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let starts: Vec<Vec<usize>> = (0..opts.restarts.max(1))
            .map(|_| axes.iter().map(|a| rng.gen_range(0..a.len())).collect())
            .collect();
        let results: Vec<(f64, Vec<usize>)> =
            starts.into_par_iter().map(|s| coordinate_descent(&coarse, &axes, s)).collect();
        let (bi, _) = results
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.0))
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        from_indices(&axes, &results[bi].1)
    };
    let (lower, upper) = bounds(problem, k);
    let cell = (&upper - &lower) / (opts.grid_points - 1) as f64;
    let (mut best, mut cost) = refine(&fine, &lower, &upper, &cell, start);
    if opts.polish {
        let (x, c) = polish(&fine, &best, &lower, &upper);
        if c <= cost {
            best = x;
            cost = c;
        }
    }
    if !cost.is_finite() {
        return Err(SolverError::Numerical("no control on the search grid realizes the mode sequence".into()));
    }
    let trajectory = fine.simulate(&best).expect("best controls simulate");
    let n = problem.state_dim();
    let h = opts.gradient_step;
    let grads: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let value = |sign: f64| {
                let mut x0 = problem.x0.clone();
                x0[i] += sign * h;
                let o = fine.with_x0(x0, fine_step);
                polish(&o, &best, &lower, &upper).1
            };
            (value(1.0) - value(-1.0)) / (2.0 * h)
        })
        .collect();
    let segment_times = (0..=k).map(|j| problem.t0 + problem.horizon() * j as f64 / k as f64).collect();
    Ok(OracleSolution {
        segment_times,
        controls: (0..k).map(|j| best.rows(j * m, m).into_owned()).collect(),
        cost,
        cost_gradient_x0: Vector::from_vec(grads),
        trajectory,
        exhaustive: is_exhaustive,
        evaluations: coarse.count() + fine.count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceOptions {
    /// Which switching manifold is sampled.
    pub switch: usize,
    /// Penalty weights applied in sequence, each warm-started from the last.
    pub weights: Vec<f64>,
    /// Largest crossing-parameter mismatch of a reachable sample.
    pub reach_tol: f64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self { switch: 0, weights: vec![1e2, 1e4, 1e6], reach_tol: 1e-3 }
    }
}

const PROJECTION_TOL: f64 = 1e-12;

/// Moves `x` along the spatial guard gradient onto the zero set at time `t`.
fn project_onto_guard(problem: &HybridProblem, switch: usize, x: &Vector, t: f64) -> (Vector, f64) {
    let guard = &problem.guards[switch];
    let mut y = x.clone();
    for _ in 0..50 {
        let g = guard.value(&y, t);
        if g.abs() <= PROJECTION_TOL {
            break;
        }
        let (gx, _) = guard.gradient(&y, t);
        let nn = gx.norm_squared();
        if nn == 0.0 {
            break;
        }
        y -= gx * (g / nn);
    }
    let r = guard.value(&y, t).abs();
    (y, r)
}

/// Samples the optimal cost over controls whose crossing of the chosen
/// switching manifold happens at each chart point, enforcing the crossing
/// with a quadratic penalty of increasing weight. The crossing time follows
/// from simulation unless the chart has a time axis.
pub fn value_surface_oracle(
    problem: &HybridProblem,
    chart: &SurfaceChart,
    axes: &[Vec<f64>],
    warm: &OracleSolution,
    oracle: &OracleOptions,
    opts: &SurfaceOptions,
) -> Result<ValueSurface, SolverError> {
    if opts.switch >= problem.num_switches() {
        return Err(SolverError::Budget(format!("switch {} does not exist", opts.switch)));
    }
    if axes.iter().any(|a| a.is_empty()) {
        return Err(SolverError::Budget("empty parameter axis".into()));
    }
    let k = warm.controls.len();
    let step = oracle.step.unwrap_or_else(|| problem.default_step());
    let obj = Objective::new(problem, k, step);
    let (lower, upper) = bounds(problem, k);
    let total: usize = axes.iter().map(Vec::len).product();
    let start = warm.flat_controls();
    let nodes: Vec<Vec<f64>> = (0..total)
        .map(|mut f| {
            let mut p = vec![0.0; axes.len()];
            for a in (0..axes.len()).rev() {
                p[a] = axes[a][f % axes[a].len()];
                f /= axes[a].len();
            }
            p
        })
        .collect();
    let samples = nodes
        .into_par_iter()
        .map(|params| {
            let y = Vector::from_vec(params.clone());
            let (x_raw, t) = chart.embed(&y);
            let (x, guard_residual) = project_onto_guard(problem, opts.switch, &x_raw, t);
            let target = chart.params_of(&x, t);
            let mismatch = |traj: &HybridTrajectory| {
                let sw = &traj.switches[opts.switch];
                (chart.params_of(&sw.x_minus, sw.t) - &target).norm()
            };
            let mut z = start.clone();
            for &w in &opts.weights {
                let f = |c: &Vector| match obj.simulate(c) {
                    Some(traj) => {
                        let r = mismatch(&traj);
                        traj.cost(problem) + w * r * r
                    }
                    None => f64::INFINITY,
                };
                z = bfgs_box(&f, &z, &lower, &upper, &BfgsOptions::default()).0;
            }
            let (value, residual) = match obj.simulate(&z) {
                Some(traj) => {
                    let r = mismatch(&traj);
                    ((r <= opts.reach_tol).then(|| traj.cost(problem)), r)
                }
                None => (None, f64::INFINITY),
            };
            SurfaceSample { params, x: x.iter().copied().collect(), t, value, residual, guard_residual }
        })
        .collect();
    Ok(ValueSurface { chart: chart.clone(), axes: axes.to_vec(), samples })
}
