//! Monte Carlo laboratory for the stochastic heat equation
//! ∂u/∂t = ½Δu + λ u ⋄ Ẇ with Gaussian noise that is colored in time and space.

// `!(x > 0.0)` is how parameter checks reject NaN alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chaos;
pub mod covariance;
pub mod error;
pub mod feynman_kac;
pub mod gaussian_field;
pub mod malliavin;
pub mod paths;
pub mod quadrature;
pub mod rng;
pub mod stats;
pub mod tails_density;

pub use error::{Error, Result};
pub use rng::Seed;
