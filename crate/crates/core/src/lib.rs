//! Nonstationary space-time Gaussian process models for gridded ensembles on
//! the sphere.
//!
//! The model factorizes the space-time dependence of an initial-condition
//! ensemble into three conditionally fitted layers:
//!
//! 1. a per-site AR(2) temporal filter ([`temporal`]),
//! 2. an evolutionary spectrum across longitude within each latitude band,
//!    mixing land and ocean Matérn-like spectral regimes ([`spectral`]),
//! 3. an AR(1) coherence structure across latitude bands ([`coherence`]).
//!
//! The layers are estimated by successive conditional approximations of the
//! restricted likelihood ([`reml`]), validated with contrast-variance and
//! periodogram diagnostics ([`diagnostics`]), and used to generate surrogate
//! ensemble runs from the fitted parameters ([`simulation`]) — a statistical
//! compression of the ensemble. [`io`] holds the on-disk formats and
//! [`synthetic`] generates fully specified test ensembles.

// negated comparisons are NaN-rejecting parameter guards; wavenumber loops
// index several tables at once
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coherence;
pub mod diagnostics;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optimize;
pub mod reml;
pub mod simulation;
pub mod spectral;
pub mod synthetic;
pub mod temporal;

pub use grid::{AnomalyField, EnsembleField, LandMask, SphereGrid};
pub use reml::{FitConfig, FittedModel, Variant};

