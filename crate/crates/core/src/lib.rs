//! Finite-horizon mean field games: environments, exact flows and
//! exploitability, tabular and neural online mirror descent, fictitious
//! play, and a config-driven experiment runner.

pub mod base;
pub mod cli;
pub mod envs;
pub mod error;
pub mod exact;
pub mod meanfield;
pub mod neural;
pub mod noise;
pub mod policy;
pub mod solvers;

pub use error::{Error, Result};
