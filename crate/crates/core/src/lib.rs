//! Exact symbolic computation of noncommutative residue densities for
//! perturbed Laplace-type operators on even-dimensional spin manifolds.
//!
//! The pipeline works pointwise in normal coordinates at a point `x0`:
//! metric jets are expressed through curvature, spin-connection jets through
//! the Riemann tensor, and everything downstream (symbol composition, symbol
//! inversion, powers of the parametrix, Clifford traces and cosphere
//! integration) is carried out over Gaussian rationals, so every reported
//! coefficient is exact.
//!
//! Module layout:
//! - [`coeff`]: exact complex-rational scalars,
//! - [`symexpr`]: canonical multivariate expressions in jet variables,
//!   cotangent coordinates and Clifford words,
//! - [`clifford`]: Clifford word normalization, traces and a faithful
//!   matrix model used for cross-checks,
//! - [`jets`]: normal-coordinate jet calculus (curvature substitution,
//!   canonical curvature patterns, numeric evaluation contexts),
//! - [`psdo`]: graded pseudodifferential symbols, composition, inversion
//!   and the closed-form symbol of negative powers,
//! - [`cosphere`]: exact monomial moments on the cosphere and the
//!   trace-integration step producing densities,
//! - [`actions`]: the operator constructions, reference formulas, density
//!   assembly, verification reports and coefficient extraction.

pub mod actions;
pub mod clifford;
pub mod coeff;
pub mod cosphere;
pub mod jets;
pub mod psdo;
pub mod symexpr;

use thiserror::Error;

/// Errors surfaced by the symbolic pipeline.
///
/// Every fallible operation in this crate returns this one error type; the
/// variants mirror the distinct ways a computation can be rejected rather
/// than silently coerced.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    /// Numeric evaluation hit a variable the context does not assign.
    #[error("unbound variable in numeric evaluation: {0}")]
    UnboundVariable(String),

    /// A scalar was required but the expression carries Clifford factors.
    #[error("expression has Clifford content where a scalar is required: {0}")]
    NonScalarClifford(String),

    /// An index lies outside `1..=n` for the working dimension `n`.
    #[error("index {index} out of range for dimension {n}")]
    IndexOutOfRange { index: u8, n: u8 },

    /// A composition or jet was requested beyond the stored truncation.
    #[error("insufficient truncation: {0}")]
    InsufficientTruncation(String),

    /// The leading symbol is not an invertible scalar monomial.
    #[error("leading symbol is not an invertible monomial: {0}")]
    NonInvertibleLeadingSymbol(String),

    /// The order -2 inverse symbol must be Clifford-free for the closed-form
    /// power formula to apply.
    #[error("order -2 inverse symbol has Clifford content; scalar required")]
    NonScalarB2,

    /// The assembled residue density kept a nonzero imaginary part.
    #[error("residue density has a nonzero imaginary part: {0}")]
    ImaginaryResidue(String),

    /// An expression fed to cosphere integration is not homogeneous of the
    /// required order.
    #[error("expression is not homogeneous of the required order: {0}")]
    NonHomogeneous(String),

    /// Interpolated coefficient polynomials failed to reproduce the data
    /// they were fitted to.
    #[error("interpolation failed to reproduce the data: {0}")]
    InterpolationResidual(String),

    /// A formal derivative was requested that the jet calculus does not
    /// carry (third jets, derivatives of curvature entries, ...).
    #[error("formal derivative unsupported: {0}")]
    DerivativeUnsupported(String),

    /// A user-supplied evaluation context violates a required identity;
    /// the message names the violated identity.
    #[error("context violates required identities: {0}")]
    ContextViolation(String),

    /// An internal invariant of the pipeline was violated. Seeing this is
    /// always a bug.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub use actions::{
    interpolate_coefficients, wres_density, CoefficientExtraction, OracleStatus, Triple,
    VerificationReport, VerifyStatus, VerifyTarget,
};
pub use coeff::{GaussRat, Rat};
pub use cosphere::{mc_moment_oracle, sphere_moment, trace_integrate, Density, McMoment};
pub use jets::{at_origin, riem_expr, scal_expr, JetContext};
pub use psdo::{GradedSymbol, JetExpr};
pub use symexpr::{Expr, JetBase, JetVar, TermKey, XiMode};
