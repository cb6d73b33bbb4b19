//! Minimum-energy steering of a linear time-varying stochastic system between
//! two zero-mean Gaussian state distributions over a finite horizon.
//!
//! The crate computes the optimal state-feedback gain from a pair of
//! differential Lyapunov equations coupled through their boundary values,
//! simulates the controlled diffusion, and verifies the relative-entropy
//! optimality identities of the closed loop.

pub mod bridge;
pub mod entropy;
pub mod error;
pub mod linalg;
mod ode;
pub mod sim;
pub mod system;

pub use error::{Error, Result};
