//! Thick (microformal) morphisms between manifolds and their quantum
//! counterparts.
//!
//! The classical layer ([`microformal`]) computes nonlinear pullbacks and
//! compositions of thick morphisms as truncated formal power series with exact
//! rational coefficients. The quantum layer ([`quantum`]) evaluates the
//! oscillatory integral operator attached to an `hbar`-dependent generating
//! function, both by a formal stationary-phase expansion and by direct
//! quadrature, and checks that the classical limit reproduces the nonlinear
//! pullback.

pub mod cli;
pub mod graded;
pub mod microformal;
pub mod parse;
pub mod poly;
pub mod quantum;

pub use graded::{solve_fixed_point, FixedPoint, GradedSeries, Grading, SeriesError, Sweep};
pub use parse::{parse, ParseError};
pub use poly::{Family, Monomial, Polynomial, Rational, Var};
