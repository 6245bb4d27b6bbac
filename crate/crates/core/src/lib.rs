//! Numerical laboratory for quasiregular dynamics on the sub-Riemannian
//! sphere S^{2n+1} and its lens-space quotients.
//!
//! The crate is organised bottom-up:
//!
//! - [`manifolds`]: points, contact form, Reeb field, horizontal paths,
//!   Carnot–Carathéodory distances, lens spaces and Heisenberg charts.
//! - [`map_zoo`]: multi-twist maps, rotations, loxodromics, inversions and
//!   their pushforwards.
//! - [`contact_flow`]: contact vector fields from potentials, flows and the
//!   trap interpolant that blends a multi-twist map into an isometry.
//! - [`distortion`]: metric and infinitesimal distortion measurements.
//! - [`trap_dynamics`]: the conformal-trap uniformly quasiregular map of a
//!   lens space, orbit classification and Julia-set approximation.
//! - [`mm_derivative`]: Pansu / Margulis–Mostow derivatives by dilation limits.
//! - [`tukia`]: the det-1 SPD symmetric space, Chebyshev centers and the
//!   invariant conformal structure.
//! - [`certify`]: the numerical acceptance checks, with explicit tolerances.
//!
//! Most geometric routines are implemented for general `n`; flows, charts and
//! derivatives are specific to S³ (`n = 1`).

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certify;
pub mod contact_flow;
pub mod distortion;
pub mod error;
pub mod manifolds;
pub mod map_zoo;
pub mod mm_derivative;
pub mod optim;
pub mod trap_dynamics;
pub mod tukia;

pub use error::{Error, Result};
pub use num_complex::Complex64;
