//! Simulation and analysis of driving protocols for a two-level system
//! `H = Gamma(t) sz + omega(t) sx`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod csv_io;
pub mod engine;
pub mod error;
pub mod hamiltonian;
pub mod lattice;
pub mod observables;
pub mod plot;
pub mod protocols;

pub use error::{QdError, Result};
