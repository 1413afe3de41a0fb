//! Learned sparse preconditioners for the preconditioned conjugate gradient
//! method.
//!
//! A small fully convolutional network reads the lower triangle and diagonal
//! of a sparse SPD matrix `A` and emits a lower factor `T + D`; the operator
//! `M⁻¹ = (T + D)(T + D)ᵀ` is trained to minimise `κ(A M⁻¹)`. Classic
//! baselines (Jacobi, IC(0), smoothed-aggregation AMG) share the same
//! [`precond::Preconditioner`] interface, and [`bench`] compares all of them
//! on 2D Poisson pressure systems.

// `!(x > 0.0)` guards are deliberate: NaN must take the failure branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cnn;
pub mod error;
pub mod exec;
pub mod krylov;
pub mod poisson;
pub mod precond;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
pub use sparse::{CsrMatrix, DenseMatrix};

/// Formats a float with 17 significant digits, the persisted-file convention.
pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
