use thiserror::Error;

/// Crate-wide error type. Most numerical routines either succeed or report a
/// structured failure; verification checks that merely *fail* (as opposed to
/// being unable to run) are reported through ledger rows, not through `Err`.
#[derive(Debug, Error)]
pub enum Error {
    #[error("potential is not integrable: {0}")]
    NonIntegrable(String),

    #[error("potential failed the convexity probe near y = {location}: {detail}")]
    NonConvex { location: f64, detail: String },

    #[error("potential takes a non-finite value at y = {0}")]
    NonFinite(f64),

    #[error("level {level} lies below the potential minimum {minimum}")]
    BelowMinimum { level: f64, minimum: f64 },

    #[error("level grid lost probability mass: accumulated {mass}, deficit beyond tolerance {tol}")]
    GridDeficit { mass: f64, tol: f64 },

    #[error("level set came back empty at q = {q}; the profile is inconsistent")]
    EmptyLevelSet { q: f64 },

    #[error("expected-level routes disagree: |{route_a} - {route_b}| > {tol}")]
    RouteMismatch { route_a: f64, route_b: f64, tol: f64 },

    #[error("point is not inside the body (potential value {value} > level {level})")]
    NotInside { value: f64, level: f64 },

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("trial function violates the Lipschitz bound: quotient {quotient} at sampled pair")]
    LipschitzViolation { quotient: f64 },

    #[error("a required norm is infinite; the bound is vacuous")]
    InfiniteNorm,

    #[error("discretized domain is empty")]
    EmptyDomain,

    #[error("discretized domain is disconnected ({components} components)")]
    DisconnectedDomain { components: usize },

    #[error("eigensolver failed to converge: residual {residual} after {iterations} iterations")]
    ConvergenceFailure { residual: f64, iterations: usize },

    #[error("level must exceed the potential value at the origin: E = {level} <= V(0) = {at_origin}")]
    LevelBelowOrigin { level: f64, at_origin: f64 },

    #[error("config parse error: {0}")]
    ParseError(String),

    #[error("config validation error: {field}: {detail}")]
    ValidationError { field: String, detail: String },

    #[error("quadrature did not reach the requested tolerance on [{a}, {b}]")]
    QuadratureFailure { a: f64, b: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
