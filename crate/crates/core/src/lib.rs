//! Hybrid maximum principle toolkit.
//!
//! Simulation, adjoint propagation, indirect shooting and numerical
//! certification of necessary optimality conditions for impulsive hybrid
//! optimal control problems posed on charted Riemannian manifolds.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod integrate;
pub mod model;
pub mod optim;
pub mod hmp;
pub mod solver;
pub mod cli;
