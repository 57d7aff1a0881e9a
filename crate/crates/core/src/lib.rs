//! Differentiable ray-traced Gaussian splatting.
//!
//! Scenes are sets of anisotropic 3D Gaussians. Rays are intersected with
//! each Gaussian's confidence ellipsoid through a BVH, blended front to back
//! with the Gaussian's maximum response along the ray as opacity, and the
//! whole pipeline is differentiated by hand. Trained scenes can be composed
//! with triangle meshes for shadows, mirrors and glass.

pub mod backward;
pub mod bvh;
pub mod compose;
pub mod config;
pub mod dataset;
pub mod densify;
pub mod error;
pub mod exec;
pub mod gradcheck;
pub mod image;
pub mod intersect;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod ply;
pub mod ray;
pub mod render;
pub mod scene;
pub mod train;

pub use config::{DensifyConfig, LossConfig, RenderConfig, TrainConfig, DEFAULT_Q};
pub use error::{Error, Result};
pub use exec::Execution;
pub use image::{Image, Plane};
pub use linalg::{Mat3, Quaternion, Vec3};
pub use ray::Ray;
pub use render::{Camera, RayPayload, SceneAccel};
pub use scene::{Gaussian, GaussianScene};
