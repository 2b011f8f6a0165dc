//! Variational multi-Davydov-D2 dynamics for a few-level system coupled to
//! harmonic modes, with apoptosis of nearly coincident coherent states.
//!
//! The wave function is a superposition of `M` normalized coherent states,
//! each carrying its own vector of system amplitudes. Equations of motion
//! come from the time-dependent variational principle; near-linear
//! dependencies between basis functions are removed by merging them into
//! rigidly co-moving groups.

pub mod apoptosis;
pub mod ensemble;
pub mod error;
pub mod linsys;
pub mod models;
pub mod observables;
pub mod oracle;
pub mod propagator;

pub use error::{Error, Result};

/// Double precision complex scalar.
#[allow(non_camel_case_types)]
pub type c64 = num_complex::Complex64;
