//! Simulation engine for gradient-following taxis on compositional
//! energy-based landscapes.

pub mod assays;
pub mod config;
pub mod controllers;
pub mod environment;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod interoception;
pub mod inverse;
pub mod landscape;
pub mod rollout;
pub mod serve;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::{Bounds, Vec2};
