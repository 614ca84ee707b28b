//! Numerical laboratory for the boundary driven weakly asymmetric simple
//! exclusion process on `[-1, 1]`.
//!
//! The crate computes the stationary hydrodynamic profile, the non-local
//! quasi-potential `S_E` through its variational formula, optimal fluctuation
//! paths, the dynamical rate functional, exact and Monte Carlo statistics of
//! the microscopic chain, and the strongly asymmetric limit `E -> -inf`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod asymlimit;
pub mod dynamics;
pub mod elgp;
pub mod error;
pub mod functionals;
pub mod grid;
pub mod microsim;
pub mod numerics;
pub mod ratefn;
pub mod stationary;

pub use error::{Error, Result};
pub use grid::{DensityProfile, Grid, Params, PotentialProfile, SpacetimePath};
