//! Matrix Dyson equation toolkit: solve -m(z)^{-1} = z 1 - a + S[m(z)] on the
//! upper half-plane, continue to the real axis, classify the singularities of
//! the self-consistent density of states, and validate against sampled
//! Kronecker random matrices.

pub mod algebra;
pub mod bandmass;
pub mod density;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod shape;
pub mod solver;
pub mod spectral;

pub use error::{CoreError, Result};
