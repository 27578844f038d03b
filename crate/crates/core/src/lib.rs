//! Minimizers of the hypersingular Riesz `(s, d, q)`-energy
//!
//! ```text
//! E(w) = sum_{x != y} |x - y|^{-s} + tau(s, d, N) / N * sum_x q(x),   s >= d
//! ```
//!
//! on compact `d`-dimensional sets, together with the limiting measure that
//! minimizers converge to, the inverse problem of designing a field for a
//! prescribed density, and separation/covering diagnostics.
//!
//! Module map:
//!
//! - [`geometry`]: intervals, spheres, tori and chart-based sets with
//!   quadrature, metric retraction and tangent projection.
//! - [`constants`]: the Riesz constants `C_{s,d}` and `M_{s,d}`.
//! - [`fields`]: external fields, including the five worked examples, field
//!   design and its stability under a perturbed constant.
//! - [`equilibrium`]: the unit-mass level `L1`, the limiting density and the
//!   asymptotic energy constant.
//! - [`optimizer`]: energy, gradient and multi-start projected descent.
//! - [`diagnostics`]: separation, covering radius, mesh ratio, empirical
//!   densities and weak* errors.
//! - [`cli`]: run configurations, reproductions, and file export used by the
//!   `riesz` binary.

pub mod cli;
pub mod constants;
pub mod diagnostics;
pub mod equilibrium;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod optimizer;
mod quadrature;

pub use constants::{riesz_constant, RieszConstant};
pub use equilibrium::EquilibriumMeasure;
pub use error::{Error, Result};
pub use fields::ExternalField;
pub use geometry::{CompactSet, Point};
pub use optimizer::{Configuration, ExecMode, InitMode, OptimizerSettings};
