//! Camera-less neural radiance fields with a hash-encoded color-correction
//! branch.
//!
//! The crate covers the full pipeline: a small reverse-mode autodiff engine,
//! positional/directional/hash encodings, the radiance field, learnable
//! pinhole cameras with NDC rays, volume rendering, joint training, and
//! evaluation by trajectory alignment and test-camera refinement.

pub mod autodiff;
pub mod camera;
pub mod checkpoint;
pub mod config;
pub mod encodings;
pub mod error;
pub mod evaluation;
pub mod field;
pub mod gradcheck;
pub mod image;
pub mod render;
pub mod scene;
pub mod synthetic;
pub mod trainer;

pub use autodiff::{Tensor, Value};
pub use camera::{Cameras, Pose};
pub use config::Config;
pub use error::{Error, Result};
pub use field::{Field, FieldConfig};
pub use image::Image;
pub use scene::Scene;
pub use trainer::{TrainConfig, Trainer};
