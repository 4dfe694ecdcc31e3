//! Adversarial attacks on small 3D point-cloud classifiers, with an
//! auto-encoder regularizer, point-cloud defenses, distance metrics, a
//! synthetic parametric-shape dataset, and an evaluation harness.
//!
//! The geometry core is generic over the scalar type; the rest of the crate
//! works with the `f32` aliases [`PointCloud`] and [`Perturbation`] defined
//! here.

pub mod attacks;
pub mod dataset;
pub mod defenses;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};

/// Concrete single-precision point cloud used by the networks and attacks.
pub type PointCloud = geometry::PointCloudOf<f32>;
/// Concrete single-precision per-point offset field.
pub type Perturbation = geometry::PerturbationOf<f32>;
