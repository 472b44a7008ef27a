//! Geometry-aware style transfer for voxel radiance fields.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below name the common instantiations.

pub mod error;
pub mod eval;
pub mod features;
pub mod field;
pub mod image;
pub mod losses;
pub mod perspective;
pub mod pipeline;
pub mod render;
pub mod scalar;
pub mod scenes;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type RadianceField32 = field::RadianceField<f32>;
pub type RadianceField64 = field::RadianceField<f64>;
pub type VoxelGrid32 = field::VoxelGrid<f32>;
pub type VoxelGrid64 = field::VoxelGrid<f64>;
pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type FeatureExtractor32 = features::FeatureExtractor<f32>;
pub type FeatureExtractor64 = features::FeatureExtractor<f64>;
pub type StylePair32 = perspective::StylePair<f32>;
pub type StylePair64 = perspective::StylePair<f64>;
pub type SceneDataset32 = scenes::SceneDataset<f32>;
pub type SceneDataset64 = scenes::SceneDataset<f64>;
pub type Checkpoint32 = pipeline::Checkpoint<f32>;
pub type Checkpoint64 = pipeline::Checkpoint<f64>;
