//! Next-generation reservoir computing with a seeded pseudorandom nonlinear
//! feature projection.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod dynamics;
pub mod embed;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod project;
pub mod readout;
pub mod rollout;
pub mod scalar;
pub mod trajectory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Trajectory = trajectory::Trajectory<f64>;
pub type Trajectory32 = trajectory::Trajectory<f32>;
pub type Normalizer = embed::Normalizer<f64>;
pub type Normalizer32 = embed::Normalizer<f32>;
pub type ReadoutMatrix = readout::ReadoutMatrix<f64>;
pub type ReadoutMatrix32 = readout::ReadoutMatrix<f32>;
pub type Model = rollout::NgrcModel<f64>;
pub type Model32 = rollout::NgrcModel<f32>;
