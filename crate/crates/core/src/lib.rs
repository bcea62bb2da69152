//! Stochastic Wasserstein Hamiltonian flows on finite weighted graphs.

pub mod control;
pub mod energy;
pub mod error;
pub mod flow;
pub mod graph;
pub mod noise;
pub mod schrodinger;

pub use error::{Error, Result};
