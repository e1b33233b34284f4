//! Chart-based Riemannian primitives.
//!
//! Every manifold is represented by a single chart: points, tangent vectors
//! and covectors carry their coordinate components together with the chart
//! they live in. The metric is a field of symmetric positive-definite
//! matrices over the chart.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Identifier of the chart a coordinate vector is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ChartId(pub u32);

#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub chart: ChartId,
    pub coords: DVector<f64>,
}

impl ChartPoint {
    pub fn new(chart: ChartId, coords: DVector<f64>) -> Self {
        Self { chart, coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    /// Same chart and coordinates equal within `tol` (max norm).
    pub fn same_point(&self, other: &ChartPoint, tol: f64) -> bool {
        self.chart == other.chart
            && self.dim() == other.dim()
            && (&self.coords - &other.coords).amax() <= tol
    }
}

/// Element of `T_x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVec {
    pub base: ChartPoint,
    pub comps: DVector<f64>,
}

impl TangentVec {
    pub fn new(base: ChartPoint, comps: DVector<f64>) -> Result<Self, GeometryError> {
        check_dim(base.dim(), comps.len())?;
        Ok(Self { base, comps })
    }

    pub fn zero(base: ChartPoint) -> Self {
        let n = base.dim();
        Self { base, comps: DVector::zeros(n) }
    }
}

/// Element of `T*_x M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CotangentVec {
    pub base: ChartPoint,
    pub comps: DVector<f64>,
}

impl CotangentVec {
    pub fn new(base: ChartPoint, comps: DVector<f64>) -> Result<Self, GeometryError> {
        check_dim(base.dim(), comps.len())?;
        Ok(Self { base, comps })
    }

    /// Duality pairing `<self, v>`; bases must agree.
    pub fn pair(&self, v: &TangentVec) -> Result<f64, GeometryError> {
        check_dim(self.comps.len(), v.comps.len())?;
        if !self.base.same_point(&v.base, BASE_TOL) {
            return Err(GeometryError::BaseMismatch);
        }
        Ok(self.comps.dot(&v.comps))
    }
}

const BASE_TOL: f64 = 1e-12;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), GeometryError> {
    if expected != found {
        return Err(GeometryError::DimensionMismatch { expected, found });
    }
    Ok(())
}

type MetricFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A Riemannian metric expressed in chart coordinates.
#[derive(Clone)]
pub struct MetricField {
    name: &'static str,
    evaluator: Arc<MetricFn>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField").field("name", &self.name).finish()
    }
}

impl MetricField {
    pub fn new<F>(name: &'static str, evaluator: F) -> Self
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    {
        Self { name, evaluator: Arc::new(evaluator) }
    }

    pub fn euclidean() -> Self {
        Self::new("euclidean", |x| DMatrix::identity(x.len(), x.len()))
    }

    /// Round metric of the unit sphere in stereographic coordinates,
    /// `g = 4 / (1 + |x|^2)^2 * I`.
    pub fn stereographic_sphere() -> Self {
        Self::new("stereographic-sphere", |x| {
            let s = 1.0 + x.norm_squared();
            DMatrix::identity(x.len(), x.len()) * (4.0 / (s * s))
        })
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Evaluates the metric matrix and verifies symmetry and positive definiteness.
    pub fn eval(&self, x: &ChartPoint) -> Result<DMatrix<f64>, GeometryError> {
        let g = (self.evaluator)(&x.coords);
        let n = x.dim();
        if g.nrows() != n || g.ncols() != n {
            return Err(GeometryError::DimensionMismatch { expected: n, found: g.nrows() });
        }
        let asym = (&g - g.transpose()).amax();
        if !asym.is_finite() || asym > 1e-12 * (1.0 + g.amax()) {
            return Err(GeometryError::NotPositiveDefinite { coords: x.coords.as_slice().to_vec() });
        }
        if g.clone().cholesky().is_none() {
            return Err(GeometryError::NotPositiveDefinite { coords: x.coords.as_slice().to_vec() });
        }
        Ok(g)
    }

    pub fn inner(&self, v: &TangentVec, w: &TangentVec) -> Result<f64, GeometryError> {
        let g = self.eval(&v.base)?;
        Ok(v.comps.dot(&(g * &w.comps)))
    }

    /// Inverse metric applied to a covector (index raising).
    pub fn sharp(&self, p: &CotangentVec) -> Result<TangentVec, GeometryError> {
        let g = self.eval(&p.base)?;
        let chol = g
            .cholesky()
            .ok_or_else(|| GeometryError::NotPositiveDefinite { coords: p.base.coords.as_slice().to_vec() })?;
        Ok(TangentVec { base: p.base.clone(), comps: chol.solve(&p.comps) })
    }

    /// Norm of a covector under the dual metric.
    pub fn covector_norm(&self, p: &CotangentVec) -> Result<f64, GeometryError> {
        let v = self.sharp(p)?;
        Ok(p.comps.dot(&v.comps).max(0.0).sqrt())
    }
}

/// The covector `g(v, .)`.
pub fn flat(metric: &MetricField, v: &TangentVec) -> Result<CotangentVec, GeometryError> {
    let g = metric.eval(&v.base)?;
    Ok(CotangentVec { base: v.base.clone(), comps: g * &v.comps })
}

/// Normal one-form of a switching manifold in `M x R`, split into its
/// spatial part `dN_x` and its time part `dN_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeCovector {
    pub dn_x: CotangentVec,
    pub dn_t: f64,
}

impl SpaceTimeCovector {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dn_x: CotangentVec { base: self.dn_x.base.clone(), comps: &self.dn_x.comps * c },
            dn_t: self.dn_t * c,
        }
    }

    /// Norm under the product metric `g_M (+) g_R`.
    pub fn norm(&self, metric: &MetricField) -> Result<f64, GeometryError> {
        let nx = metric.covector_norm(&self.dn_x)?;
        Ok((nx * nx + self.dn_t * self.dn_t).sqrt())
    }
}

/// Builds the guard normal covector from the differential of its defining
/// function. With `normalize` the result has unit length under `g (+) 1`.
pub fn normal_covector(
    guard_grad_x: &DVector<f64>,
    guard_grad_t: f64,
    metric: &MetricField,
    x: &ChartPoint,
    normalize: bool,
) -> Result<SpaceTimeCovector, GeometryError> {
    check_dim(x.dim(), guard_grad_x.len())?;
    if guard_grad_x.amax() <= 1e-12 && guard_grad_t.abs() <= 1e-12 {
        return Err(GeometryError::DegenerateGuard { coords: x.coords.as_slice().to_vec() });
    }
    let raw = SpaceTimeCovector {
        dn_x: CotangentVec { base: x.clone(), comps: guard_grad_x.clone() },
        dn_t: guard_grad_t,
    };
    if !normalize {
        return Ok(raw);
    }
    let n = raw.norm(metric)?;
    Ok(raw.scaled(1.0 / n))
}

/// Pullback `T*zeta` of a post-jump covector to the pre-jump point:
/// components `Dzeta^T p`.
pub fn pullback_jump(
    jump_jacobian: &DMatrix<f64>,
    p_plus: &CotangentVec,
    x_minus: &ChartPoint,
) -> Result<CotangentVec, GeometryError> {
    let n = x_minus.dim();
    if jump_jacobian.nrows() != p_plus.comps.len() {
        return Err(GeometryError::DimensionMismatch { expected: p_plus.comps.len(), found: jump_jacobian.nrows() });
    }
    check_dim(n, jump_jacobian.ncols())?;
    Ok(CotangentVec { base: x_minus.clone(), comps: jump_jacobian.tr_mul(&p_plus.comps) })
}

/// Pushforward of a pre-jump tangent vector: components `Dzeta v`.
pub fn pushforward_jump(
    jump_jacobian: &DMatrix<f64>,
    v: &TangentVec,
    x_plus: &ChartPoint,
) -> Result<TangentVec, GeometryError> {
    check_dim(v.comps.len(), jump_jacobian.ncols())?;
    check_dim(x_plus.dim(), jump_jacobian.nrows())?;
    Ok(TangentVec { base: x_plus.clone(), comps: jump_jacobian * &v.comps })
}

/// `D*_t zeta (p) = <p, D_t zeta>` for a time-varying jump.
pub fn time_pairing_jump(d_t_zeta: &TangentVec, p_plus: &CotangentVec) -> Result<f64, GeometryError> {
    p_plus.pair(d_t_zeta)
}
