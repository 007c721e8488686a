pub mod error;
pub mod field;
pub mod rng;
pub mod special;
pub mod stable_motion;
pub mod genfun;
pub mod occupation;
pub mod stats;
pub mod branching_system;
pub mod laplace_theory;
pub mod equilibrium;
pub mod config;
pub mod cli;
