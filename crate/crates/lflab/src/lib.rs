//! Numerical laboratory for the warped-product Ricci flow on flat tori.
//!
//! The warped metric `g = h + e^{2u} ds^2` on `N x S^1` evolves by Ricci
//! flow exactly when the pair `(h, u)` on the base `N` follows the coupled
//! system
//!
//! ```text
//! dh/dt = -2 Ric(h) + 2 grad u (x) grad u,      du/dt = Lap_h u.
//! ```
//!
//! This crate integrates that system on periodic grids (tori in dimension
//! 2 or 3), assembles all the derived curvature quantities by finite
//! differences, and continuously checks the gradient-decay bound, the
//! monotone quantity `(t - t0)|grad u|^2 + u^2`, the Hessian evolution
//! inequality, and the long-time `t * curvature` monitors along each run.
//!
//! Node loops are data-parallel via rayon (the default `parallel`
//! feature) once sweeps are large enough to amortize the fork-join cost;
//! disabling the feature or forcing [`exec::ExecMode::Sequential`] falls
//! back to identical sequential loops.

// tensor kernels index by slot on purpose (the loops mirror i,j,k,l index
// notation), and NaN-catching comparisons are written in negated form
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod scenarios;
pub mod smat;
pub mod warped;

pub use error::{Error, Result};
