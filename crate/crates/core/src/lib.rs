//! Short-time quantum propagators, time-sliced evolution, Bohmian trajectories,
//! quantum-augmented Hamiltonian flows and repeated-observation runs.

pub mod action;
pub mod bohm;
pub mod error;
pub mod flows;
pub mod numerics;
pub mod potentials;
pub mod propagators;
pub mod zeno;

pub use error::{Error, Result};
