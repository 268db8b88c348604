//! Continuous contact forces and coupled human/object rigid-body dynamics.
//!
//! A kinematic tree (from a single block to a 24-body humanoid) is driven
//! by joint torques and contact forces; a rigid object is driven by the
//! reactions. Contact forces follow a gated damped-spring model with static
//! and kinetic friction terms, and per-frame coefficients are recovered by
//! minimising the coupled Euler-Lagrange residual.

pub mod contact;
pub mod dynamics;
pub mod error;
pub mod kinematics;
pub mod metrics;
pub mod model;
pub mod simforge;
pub mod solver;
pub mod spatial;
pub mod surfaces;

pub use error::{Error, Result};
