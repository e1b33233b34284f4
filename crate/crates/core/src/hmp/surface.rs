//! Sampled value function on a parameterized switching manifold and its
//! differential.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::HmpError;
use crate::geometry::{CotangentVec, MetricField, SpaceTimeCovector};
use crate::model::{fd_jacobian, Vector};

type EmbedFn = dyn Fn(&Vector) -> (Vector, f64) + Send + Sync;
type ParamFn = dyn Fn(&Vector, f64) -> Vector + Send + Sync;

/// Local parameterization `y -> (x, t)` of a switching manifold and its
/// inverse on the manifold.
#[derive(Clone)]
pub struct SurfaceChart {
    embed: Arc<EmbedFn>,
    params_of: Arc<ParamFn>,
    /// Parameter axis that is the crossing time, if any. Without one the
    /// crossing time is left free.
    pub time_axis: Option<usize>,
}

impl fmt::Debug for SurfaceChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SurfaceChart").field("time_axis", &self.time_axis).finish()
    }
}

impl SurfaceChart {
    pub fn new<E, P>(embed: E, params_of: P, time_axis: Option<usize>) -> Self
    where
        E: Fn(&Vector) -> (Vector, f64) + Send + Sync + 'static,
        P: Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
    {
        Self { embed: Arc::new(embed), params_of: Arc::new(params_of), time_axis }
    }

    /// Chart whose parameters are the state coordinates `coords` (and the
    /// crossing time when `with_time`). The remaining coordinates and the
    /// time are copied from `(base_x, base_t)`; projection onto the guard
    /// adjusts them afterwards.
    pub fn coordinates(base_x: Vector, base_t: f64, coords: Vec<usize>, with_time: bool) -> Self {
        let k = coords.len();
        let embed_coords = coords.clone();
        Self::new(
            move |y| {
                let mut x = base_x.clone();
                for (j, &c) in embed_coords.iter().enumerate() {
                    x[c] = y[j];
                }
                (x, if with_time { y[k] } else { base_t })
            },
            move |x, t| {
                let mut p = Vector::zeros(k + usize::from(with_time));
                for (j, &c) in coords.iter().enumerate() {
                    p[j] = x[c];
                }
                if with_time {
                    p[k] = t;
                }
                p
            },
            with_time.then_some(k),
        )
    }

    pub fn embed(&self, y: &Vector) -> (Vector, f64) {
        (self.embed)(y)
    }

    pub fn params_of(&self, x: &Vector, t: f64) -> Vector {
        (self.params_of)(x, t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceSample {
    pub params: Vec<f64>,
    pub x: Vec<f64>,
    pub t: f64,
    /// `None` when the point could not be reached.
    pub value: Option<f64>,
    /// Residual of the reachability penalty.
    pub residual: f64,
    /// Guard value after projection onto the manifold.
    pub guard_residual: f64,
}

/// Value estimates on a tensor grid of chart parameters, stored row-major.
#[derive(Debug, Clone)]
pub struct ValueSurface {
    pub chart: SurfaceChart,
    pub axes: Vec<Vec<f64>>,
    pub samples: Vec<SurfaceSample>,
}

impl ValueSurface {
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.axes).fold(0, |acc, (i, ax)| acc * ax.len() + i)
    }

    pub fn value_at(&self, idx: &[usize]) -> Option<f64> {
        self.samples[self.flat_index(idx)].value
    }

    pub fn reachable_count(&self) -> usize {
        self.samples.iter().filter(|s| s.value.is_some()).count()
    }

    /// Reachable sample with the smallest value.
    pub fn argmin(&self) -> Option<&SurfaceSample> {
        self.samples
            .iter()
            .filter(|s| s.value.is_some())
            .min_by(|a, b| a.value.unwrap().total_cmp(&b.value.unwrap()))
    }
}

/// Differential of the sampled value function at a point of the surface.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct DvEstimate {
    pub at: Vec<f64>,
    /// Derivative along each chart parameter.
    pub gradient: Vec<f64>,
    /// Euclidean norm of the derivatives along all parameters.
    pub tangential_norm: f64,
    /// Derivative along the time parameter, if the chart has one.
    pub time_derivative: Option<f64>,
}

fn lagrange_derivative(ys: [f64; 3], vs: [f64; 3], y: f64) -> f64 {
    let [y0, y1, y2] = ys;
    let [v0, v1, v2] = vs;
    let l0 = ((y - y1) + (y - y2)) / ((y0 - y1) * (y0 - y2));
    let l1 = ((y - y0) + (y - y2)) / ((y1 - y0) * (y1 - y2));
    let l2 = ((y - y0) + (y - y1)) / ((y2 - y0) * (y2 - y1));
    v0 * l0 + v1 * l1 + v2 * l2
}

/// Three-point derivative of the sampled value along every parameter axis at
/// `at`, using the grid line through the node nearest to `at`.
pub fn dv_covector(surface: &ValueSurface, at: &Vector) -> Result<DvEstimate, HmpError> {
    let k = surface.dim();
    if at.len() != k {
        return Err(HmpError::NotBracketed(format!("point has {} parameters, surface has {k}", at.len())));
    }
    let nearest: Vec<usize> = (0..k)
        .map(|a| {
            let ax = &surface.axes[a];
            (0..ax.len()).min_by(|&i, &j| (ax[i] - at[a]).abs().total_cmp(&(ax[j] - at[a]).abs())).unwrap_or(0)
        })
        .collect();
    let mut gradient = Vec::with_capacity(k);
    for a in 0..k {
        let ax = &surface.axes[a];
        let (lo, hi) = (ax.first().copied().unwrap_or(f64::NAN), ax.last().copied().unwrap_or(f64::NAN));
        if !(at[a] >= lo.min(hi) && at[a] <= lo.max(hi)) {
            return Err(HmpError::NotBracketed(format!("parameter {a} = {} outside [{lo}, {hi}]", at[a])));
        }
        if ax.len() < 3 {
            return Err(HmpError::InsufficientSamples(format!("axis {a} has {} nodes, need 3", ax.len())));
        }
        let c = nearest[a].clamp(1, ax.len() - 2);
        let mut found = None;
        for start in [c - 1, c.saturating_sub(2), c] {
            if start + 2 >= ax.len() {
                continue;
            }
            let vals: Option<Vec<f64>> = (start..start + 3)
                .map(|i| {
                    let mut idx = nearest.clone();
                    idx[a] = i;
                    surface.value_at(&idx)
                })
                .collect();
            if let Some(v) = vals {
                found = Some(lagrange_derivative(
                    [ax[start], ax[start + 1], ax[start + 2]],
                    [v[0], v[1], v[2]],
                    at[a],
                ));
                break;
            }
        }
        gradient.push(found.ok_or_else(|| {
            HmpError::InsufficientSamples(format!("no three consecutive reachable samples along axis {a}"))
        })?);
    }
    let tangential_norm = gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
    let time_derivative = surface.chart.time_axis.map(|a| gradient[a]);
    Ok(DvEstimate { at: at.iter().copied().collect(), gradient, tangential_norm, time_derivative })
}

/// Covector on `M x R` whose tangential components reproduce the estimated
/// value gradient and whose normal component equals that of `normal`. The
/// normal magnitude of the true differential is not observable from
/// manifold samples; the multiplier absorbs it.
pub fn dv_jump_covector(
    estimate: &DvEstimate,
    surface: &ValueSurface,
    normal: &SpaceTimeCovector,
    metric: &MetricField,
) -> Result<SpaceTimeCovector, HmpError> {
    let y = Vector::from_column_slice(&estimate.at);
    let n = normal.dn_x.comps.len();
    let k = y.len();
    let has_time = surface.chart.time_axis.is_some();
    let embed_full = |p: &Vector| {
        let (x, t) = surface.chart.embed(p);
        let mut v = Vector::zeros(n + 1);
        v.rows_mut(0, n).copy_from(&x);
        v[n] = t;
        v
    };
    let tangents = fd_jacobian(embed_full, &y);
    let sharp = metric.sharp(&normal.dn_x)?;
    let unknowns = if has_time { n + 1 } else { n };
    let mut a = DMatrix::zeros(k + 1, unknowns);
    let mut b = Vector::zeros(k + 1);
    for r in 0..k {
        for c in 0..unknowns {
            a[(r, c)] = tangents[(c, r)];
        }
        b[r] = estimate.gradient[r] - if has_time { 0.0 } else { normal.dn_t * tangents[(n, r)] };
    }
    for c in 0..n {
        a[(k, c)] = sharp.comps[c];
    }
    b[k] = normal.dn_x.comps.dot(&sharp.comps);
    if has_time {
        a[(k, n)] = normal.dn_t;
        b[k] += normal.dn_t * normal.dn_t;
    }
    let sol = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| HmpError::InsufficientSamples(format!("tangent system unsolvable: {e}")))?;
    let dn_x = CotangentVec::new(normal.dn_x.base.clone(), sol.rows(0, n).into_owned())?;
    let dn_t = if has_time { sol[n] } else { normal.dn_t };
    Ok(SpaceTimeCovector { dn_x, dn_t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn line_surface(values: impl Fn(f64) -> Option<f64>, axis: Vec<f64>) -> ValueSurface {
        let chart = SurfaceChart::new(|y| (dvector![y[0], 1.0], 0.0), |x, _| dvector![x[0]], None);
        let samples = axis
            .iter()
            .map(|&y| SurfaceSample {
                params: vec![y],
                x: vec![y, 1.0],
                t: 0.0,
                value: values(y),
                residual: 0.0,
                guard_residual: 0.0,
            })
            .collect();
        ValueSurface { chart, axes: vec![axis], samples }
    }

    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn symmetric_minimum_has_zero_gradient() {
        let s = line_surface(|y| Some((y - 1.0).powi(2)), axis(0.6, 1.4, 9));
        let d = dv_covector(&s, &dvector![1.0]).unwrap();
        assert!(d.tangential_norm < 1e-12);
    }

    #[test]
    fn linear_values_give_exact_slope() {
        let s = line_surface(|y| Some(3.0 * y), axis(0.0, 1.0, 5));
        let d = dv_covector(&s, &dvector![0.37]).unwrap();
        assert!((d.gradient[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn point_outside_grid_is_rejected() {
        let s = line_surface(Some, axis(0.0, 1.0, 5));
        assert!(matches!(dv_covector(&s, &dvector![1.5]), Err(HmpError::NotBracketed(_))));
    }

    #[test]
    fn single_sample_is_insufficient() {
        let s = line_surface(Some, vec![1.0]);
        assert!(matches!(dv_covector(&s, &dvector![1.0]), Err(HmpError::InsufficientSamples(_))));
    }

    #[test]
    fn unreachable_neighbours_shift_the_stencil() {
        let s = line_surface(|y| if y < 0.3 { None } else { Some(y * y) }, axis(0.0, 1.0, 11));
        let d = dv_covector(&s, &dvector![0.35]).unwrap();
        assert!((d.gradient[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn jump_covector_keeps_normal_and_adds_gradient() {
        let s = line_surface(|y| Some(2.0 * y), axis(0.0, 2.0, 5));
        let d = dv_covector(&s, &dvector![1.0]).unwrap();
        let base = crate::geometry::ChartPoint::new(crate::geometry::ChartId(0), dvector![1.0, 1.0]);
        let normal = SpaceTimeCovector { dn_x: CotangentVec::new(base, dvector![0.0, 1.0]).unwrap(), dn_t: 0.0 };
        let w = dv_jump_covector(&d, &s, &normal, &MetricField::euclidean()).unwrap();
        assert!((w.dn_x.comps[0] - 2.0).abs() < 1e-8);
        assert!((w.dn_x.comps[1] - 1.0).abs() < 1e-8);
    }
}
