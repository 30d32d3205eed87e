//! Markov semigroup approximation with functional hierarchical tensors.
//!
//! The crate estimates the joint density of `(X_0, X_t)` for a diffusion
//! from simulated trajectories, stores it as a functional hierarchical
//! tensor over interlaced coordinates `(x_1, y_1, …, x_d, y_d)`, and uses
//! it as a transition operator to solve backward and forward Kolmogorov
//! equations.

// `!(x > 0.0)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod fht;
pub mod harness;
pub mod linalg;
pub mod operator;
pub mod sde;
pub mod sketch;
pub mod tree;

pub use error::{Error, Result};
