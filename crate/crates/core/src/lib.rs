//! Numerical laboratory for surface measures on level sets of functions,
//! taken with respect to non-Gaussian product probability measures.
//!
//! The crate is organized around six layers:
//!
//! - [`measure`]: the one-dimensional laws, their product truncations,
//!   exact samplers and reproducible sample batches;
//! - [`calculus`]: the scaled gradient operator on cylindrical functions,
//!   logarithmic-derivative functions, adjoint-divergence formulas for the
//!   sphere and hyperplane fields, and Monte Carlo residual validators;
//! - [`surface`]: sublevel integrals, surface densities by two independent
//!   estimators, surface/perimeter integrals and their identities;
//! - [`oracle`]: deterministic small-dimension quadrature oracles
//!   (one-dimensional identities, planar adjoint checks, co-area values);
//! - [`dynamics`]: the diagonal gradient system whose invariant law is the
//!   product measure, with invariance and moment-bound diagnostics;
//! - [`fejer`]: Fejér-kernel approximation of smooth functions by
//!   trigonometric polynomials with uniform derivative bounds.
//!
//! [`report`] carries the serialization schemas shared with the CLI harness.

pub mod calculus;
pub mod dynamics;
pub mod fejer;
pub mod measure;
pub mod oracle;
pub mod quad;
pub mod report;
pub mod rng;
pub mod special;
pub mod surface;

pub use measure::{McEstimate, OneDimLaw, ProductLaw, SampleBatch};
pub use rng::ShardLayout;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty batch requested")]
    EmptyBatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vector field carries no divergence formula")]
    MissingDivergence,
    #[error("cylindrical function carries no diagonal Hessian")]
    MissingHessian,
    #[error("field must pass adjoint validation before use")]
    UnvalidatedField,
    #[error("bandwidth window holds {got} samples, need at least {need}")]
    UnderResolved { got: usize, need: usize },
    #[error("non-finite state at coordinate {coord}, time {time}")]
    BlowUp { coord: usize, time: f64 },
    #[error("degenerate level function: zero direction vector")]
    DegenerateLevelFunction,
    #[error("singular evaluation point: |Rx|^2 below 1e-300")]
    SingularPoint,
    #[error("scheme {scheme} is only valid for m = 1")]
    InvalidScheme { scheme: String },
    #[error("field norm exceeds 1 at a probe point (|F| = {norm})")]
    FieldNotUnit { norm: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
