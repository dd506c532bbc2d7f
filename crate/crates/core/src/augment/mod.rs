//! Stochastic augmentations that keep track of where every output element came from.
//!
//! Image transforms carry a [`CoordMap`] back to the original pixel grid, which is what
//! defines Stage-1 positives; cloud transforms return an [`IndexMap`](crate::geometry::IndexMap)
//! and the rigid motion that was applied, which Stage 2 uses to re-aim the camera.

mod cloud;
mod coord_map;
mod image;
mod spec;

pub use cloud::{augment_cloud, CloudAugmentation};
pub use coord_map::CoordMap;
pub use image::{augment_image, augment_image_traced, match_positive_pixels, AppliedTransform, PixelPair};
pub use spec::{Transform2D, Transform3D, TransformSpec2D, TransformSpec3D};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("invalid transform spec: {0}")]
    InvalidSpec(String),
    #[error("crop window of {0:.3}x{1:.3} source pixels is below 1x1")]
    DegenerateCrop(f64, f64),
    #[error("the two views share no source pixel")]
    EmptyOverlap,
    #[error("every point was dropped")]
    EmptyCloud,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
