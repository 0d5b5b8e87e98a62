//! Simulation of Hartmann-Hahn polarization transfer between an NV center and
//! a bath of P1 electron spins in diamond.
//!
//! The crate is layered: [`quantum`] holds the linear algebra on tensor-product
//! spaces, [`spin_models`] the NV/P1 Hamiltonians, [`bath`] samples bath
//! geometries, [`pulse`] parses and compiles pulse sequences, [`experiments`]
//! runs ensemble-averaged sweeps and [`analysis`] fits the resulting traces.

pub mod analysis;
pub mod bath;
pub mod error;
pub mod experiments;
pub mod pulse;
pub mod quantum;
pub mod spin_models;

pub use error::{Error, Result};
