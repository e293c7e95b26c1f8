//! Smoothed BDF convolution quadrature for fractional evolution equations
//! with hyper-singular sources `t^μ ∘ f(t)`, `−2 < μ < −1`.
//!
//! The source is regularised by an m-fold integral (`G = J^m g`, evaluated
//! through Hadamard finite parts), the fractional derivative is discretised by
//! BDF-k convolution quadrature, and the right-hand side is differentiated
//! back with the integer-order quadrature of the same family.
//!
//! Module map:
//! - [`cq`]: BDF generating polynomials, CQ weights, discrete derivatives
//! - [`source`]: hyper-singular sources and their smoothed grid samples
//! - [`spatial`]: Chebyshev–Gauss–Lobatto Dirichlet Laplacian
//! - [`solver`]: the time stepper
//! - [`oracle`]: Mittag-Leffler reference solutions and convergence orders
//! - [`experiment`]: convergence-table sweeps and their CSV/Markdown output

// `!(x > 0.0)` style guards are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cq;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod oracle;
pub mod quadrature;
pub mod solver;
pub mod source;
pub mod spatial;

pub use error::{Error, Result};
