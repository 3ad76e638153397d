//! Numerical laboratory for linear degenerate backward stochastic PDEs on a
//! Bernoulli path tree.

pub mod coefficients;
pub mod control;
pub mod energy;
pub mod expr;
pub mod grid;
pub mod lattice;
pub mod oracles;
pub mod random;
pub mod solver;
