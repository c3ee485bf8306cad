//! Quantitative localization toolkit for Schrödinger eigenproblems
//! `-Δu + V u = E u` on the periodic unit cube with two-valued, cellwise
//! constant potentials.
//!
//! The crate is organized bottom-up:
//!
//! * [`potential`] and [`geometry`] generate the disorder fields and measure
//!   the valley geometry (maximal α-cubes, `L`, `κ_T`, valley counts).
//! * [`fem`] assembles the periodic Q1 discretization on an `ε/m` subgrid.
//! * [`schwarz`] builds the ε-local overlapping additive Schwarz operator and
//!   the Richardson iteration driven by it.
//! * [`eig`] holds the reference eigensolvers and the (preconditioned, block)
//!   inverse iterations.
//! * [`analysis`] runs the decay, gap and Friedrichs experiments.
//! * [`io`] and [`svg`] read and write the on-disk artifacts.

// NaN-rejecting `!(x > y)` checks and index loops over several arrays are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod dense;
pub mod eig;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod krylov;
pub mod lattice;
pub mod potential;
pub mod rng;
pub mod schwarz;
pub mod sparse;
pub mod svg;

pub use error::{Error, Result};
pub use lattice::{CellMask, Lattice};
pub use potential::{GridSpec, PotentialField};
