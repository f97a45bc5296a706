//! Self-adjoint realizations of ordinary differential expressions.
//!
//! The crate covers the whole pipeline from a formal expression to a
//! concrete operator: canonical expressions and their local forms
//! ([`expr`]), numerical solutions ([`ode`]), deficiency indices
//! ([`endpoints`]), boundary-condition parametrizations ([`bcalg`]),
//! eigenvalue search ([`spectral`]) and numerical identity checks
//! ([`verify`]). The [`cli`] module drives everything from a TOML problem
//! description.

pub mod bcalg;
pub mod cli;
pub mod endpoints;
pub mod expr;
pub mod interval;
pub mod ode;
pub mod quad;
pub mod spectral;
pub mod verify;

pub use num_complex::Complex64 as C64;

/// The imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);
