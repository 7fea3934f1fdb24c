//! Semismooth Newton solvers with deflation for computing multiple distinct
//! solutions of complementarity problems and a 1D obstacle-constrained beam.

pub mod cli;
pub mod continuation;
pub mod deflation;
pub mod linalg;
pub mod obstacle1d;
pub mod problems;
pub mod reformulate;
pub mod solver;
