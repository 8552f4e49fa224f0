//! Counterfactual scene simulator and paired-video dataset forge.
//!
//! A scene is sampled from a seed, simulated twice (with and without its
//! removal targets), rendered with a primary-ray tracer, and packaged with
//! quadmask conditioning, ground-truth optical flow, and flow-warped noise.

pub mod cli;
pub mod dataset;
pub mod exec;
pub mod geometry;
pub mod masks;
pub mod noisewarp;
pub mod math;
pub mod physics;
pub mod reasoner;
pub mod render;
pub mod scene;

pub use exec::Exec;
pub use math::Vec3;
