//! Radiance-field to light-field distillation at desk scale.
//!
//! The pipeline: train a ray-marching teacher on analytic blob scenes,
//! synthesize a pseudo-ray dataset from it, train a deep residual MLP
//! light-field student that renders each pixel with a single network
//! query, and benchmark the quality/FLOPs/wall-time trade-off.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod distill;
pub mod encoding;
pub mod error;
pub mod flops;
pub mod img;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod scene;
pub mod student;
pub mod teacher;
pub mod volume;

pub use error::Error;
