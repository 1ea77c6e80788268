//! CPU toolkit for reconstructing relightable 3D assets from calibrated
//! multi-view images.
//!
//! The scene is represented as a cloud of flat 2D Gaussian surfels, each
//! carrying a sampled signed-distance value from which its opacity is derived.
//! A software tile rasterizer alpha-blends PBR attributes into a deferred
//! G-buffer, a split-sum image-based-lighting pass shades each pixel against a
//! cubemap environment, and hand-written adjoints for every stage drive an
//! Adam-based training loop. Monte-Carlo and analytic oracles for each
//! component live next to the code they validate.

pub mod camera;
pub mod checkpoint;
pub mod cubemap;
pub mod dataset;
pub mod envio;
pub mod error;
pub mod field;
pub mod grid;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod projection;
pub mod raster;
pub mod rng;
pub mod shading;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
