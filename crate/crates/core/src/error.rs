use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("metric is not symmetric positive definite at {coords:?}")]
    NotPositiveDefinite { coords: Vec<f64> },
    #[error("guard gradient vanishes at {coords:?}; not an embedded hypersurface there")]
    DegenerateGuard { coords: Vec<f64> },
    #[error("base points of covector and vector differ")]
    BaseMismatch,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("unknown parameter '{param}' for problem '{problem}'")]
    UnknownParameter { problem: String, param: String },
    #[error("parameter '{param}' = {value} outside documented range [{min}, {max}]")]
    ParameterOutOfRange { param: String, value: f64, min: f64, max: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("integration step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("state blew up (non-finite) at t = {time}")]
    BlowUp { time: f64 },
    #[error("tangential guard crossing at t = {time} (rate {rate:e})")]
    TangentialCrossing { time: f64, rate: f64 },
    #[error("schedule violation: crossing of guard {guard} after {consumed} switches (limit {limit})")]
    ScheduleViolation { guard: usize, consumed: usize, limit: usize },
    #[error("invalid time span [{0}, {1}]")]
    InvalidSpan(f64, f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HmpError {
    #[error("tangential crossing: transversality denominator {denominator:e} too small")]
    TangentialCrossing { denominator: f64 },
    #[error("jump Jacobian is not invertible (condition number {condition:e})")]
    NonInvertibleJump { condition: f64 },
    #[error("variant {variant} inconsistent with inputs: {reason}")]
    VariantMismatch { variant: String, reason: String },
    #[error("invalid needle: {0}")]
    InvalidNeedle(String),
    #[error("value surface does not bracket the requested point: {0}")]
    NotBracketed(String),
    #[error("value surface has too few reachable samples: {0}")]
    InsufficientSamples(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("inadmissible shooting state: {0}")]
    Inadmissible(String),
    #[error("max-iterations: no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("line-search stall at iteration {iteration} (residual {residual:e})")]
    LineSearchStall { iteration: usize, residual: f64 },
    #[error("singular Jacobian at iteration {iteration} (sigma ratio {ratio:e})")]
    SingularJacobian { iteration: usize, ratio: f64 },
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Hmp(#[from] HmpError),
}

impl SolverError {
    /// Short failure class used in reports.
    pub fn class(&self) -> &'static str {
        match self {
            SolverError::Inadmissible(_) => "inadmissible",
            SolverError::MaxIterations { .. } => "max-iterations",
            SolverError::LineSearchStall { .. } => "line-search-stall",
            SolverError::SingularJacobian { .. } => "singular-jacobian",
            SolverError::Budget(_) => "budget",
            SolverError::Numerical(_) => "numerical",
            SolverError::Model(_) => "model",
            SolverError::Flow(_) => "flow",
            SolverError::Hmp(_) => "hmp",
        }
    }
}
