//! Small fixed encoders with hand-written reverse-mode gradients.
//!
//! * [`EncoderParams2D`]: three 3×3 convolutions (3→16→32→D), stride 1, zero padding,
//!   ReLU after the first two.
//! * [`EncoderParams3D`]: per-point MLP on xyz+rgb, max over the k nearest neighbours,
//!   then an MLP on `self ‖ aggregate`.
//! * [`HeadParams`]: linear decoder followed by L2 normalisation.
//!
//! Every backward pass is certified against central differences by [`gradient_check`].

mod checkpoint;
mod conv;
mod embedding;
mod encoder2d;
mod encoder3d;
mod gradcheck;
mod head;
mod knn;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use embedding::EmbeddingSet;
pub use encoder2d::{encode_image, Encoder2dTape, EncoderParams2D, FeatureMap2D};
pub use encoder3d::{encode_points, Encoder3dTape, EncoderParams3D, PointFeatureSet, DEFAULT_K};
pub use gradcheck::{gradient_check, relative_error, GradCheckConfig, GradCheckReport, Probe};
pub use head::{decode_normalize, HeadParams, HeadTape, NORM_EPS, NORM_HARD_MIN};
pub use knn::{knn_brute_force, knn_canonical};
pub use tensor::{ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NnError {
    #[error("input too small: {0}")]
    InputTooSmall(String),
    #[error("row {row} has pre-normalisation norm {norm:e}")]
    DegenerateEmbedding { row: usize, norm: f64 },
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },
    #[error("missing tensor `{0}` in checkpoint")]
    MissingTensor(String),
    #[error("i/o error: {0}")]
    Io(String),
}
