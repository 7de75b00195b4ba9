//! A numerical laboratory for potential theory on colander domains.
//!
//! The crate constructs recurrent obstacle sets as finite unions of balls,
//! estimates the harmonic measure of the outer boundary of the resulting
//! colander domains by walk-on-spheres Monte Carlo with certified layered
//! bounds, computes equilibrium measures and capacities, and builds an
//! explicit subharmonic function whose zero set is recurrent while its
//! growth follows the same envelope integral that drives the measure decay.
//!
//! Module map:
//!
//! * [`mathcore`] — kernels, profile validation, the envelope and its
//!   integrals, the step recursion;
//! * [`setgen`] — ball unions, colanders, shell lattices, the recurrence
//!   predicate;
//! * [`capacity`] — equilibrium measures, Robin constants, barrier
//!   potentials, a Monte Carlo capacity cross-check;
//! * [`harmonic`] — walk-on-spheres estimators, a planar grid oracle,
//!   layered bounds, decay fitting;
//! * [`construction`] — the explicit subharmonic function with recurrent
//!   zero set;
//! * [`cli`] — a reproducible experiment driver with manifests and CSV
//!   outputs.

pub mod capacity;
pub mod cli;
pub mod construction;
pub mod error;
pub mod harmonic;
pub mod mathcore;
pub mod rng;
pub mod setgen;

mod book;

pub use error::{Error, Result};
