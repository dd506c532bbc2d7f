//! Synthetic rooms with boxes: labelled point clouds, point-splat renderings and the
//! exact z-buffer correspondences behind each rendering, plus their file formats.

mod io;
mod scene;

pub use io::{
    camera_from_str, camera_to_string, cloud_from_str, cloud_to_string, correspondences_from_str,
    correspondences_to_string, image_from_ppm, image_to_ppm, read_camera, read_cloud, read_correspondences,
    read_features, read_image, read_scene, view_file, write_camera, write_cloud, write_correspondences,
    write_features, write_image, write_scene, FeatureDump, CLOUD_FILE, FEATURE_MAGIC,
};
pub use scene::{
    effective_areas, generate_scene, layout, render, sample_points, surfaces, ClassStyle, SceneBox, SceneConfig,
    SceneView, Surface, SyntheticScene, BACKGROUND, CEILING, FLOOR, WALL,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("could not place {what} after {tries} tries")]
    PlacementFailure { what: String, tries: usize },
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("value out of range at byte {offset}: {msg}")]
    Range { offset: u64, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}
