//! Pinhole camera math, z-buffered point/pixel correspondences and voxel-grid
//! downsampling.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame: +x right, +y down, +z forward (optical axis);
//! * a [`Pose`] maps world points into the camera frame (`q = R·p + t`);
//! * pixel centres sit on integer coordinates, `u` is the column and `v` the row.

mod camera;
mod cloud;
mod correspond;
mod image;
pub(crate) mod linalg;
mod voxel;

pub use camera::{project_point, unproject, CameraIntrinsics, OutOfView, Pose, Projection};
pub use cloud::PointCloud;
pub use correspond::{build_correspondences, pixel_of, Correspondence, CorrespondenceSet};
pub use image::Image;
pub use voxel::{voxelize, IndexMap};

/// Points with a camera-frame depth at or below this are behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("depth must be positive, got {0}")]
    DegenerateDepth(f64),
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("voxel size must be positive and finite, got {0}")]
    InvalidVoxelSize(f64),
}
