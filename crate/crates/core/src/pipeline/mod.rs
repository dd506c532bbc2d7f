//! The two training stages: pixel-level contrastive pre-training of the image encoder,
//! then distillation of its frozen pixel embeddings into the point encoder.

mod bench;
mod stage1;
mod stage2;

use std::fmt::Write as _;
use std::time::Duration;

use crate::augment::{AugmentError, Transform2D, Transform3D, TransformSpec2D, TransformSpec3D};
use crate::eval::EvalError;
use crate::geometry::GeometryError;
use crate::loss::{LossConfig, LossError, NegativeCount};
use crate::nn::{Checkpoint, EncoderParams2D, EncoderParams3D, HeadParams, NnError, ParamSet, Tensor};
use crate::optim::{OptimConfig, OptimError};
use crate::seed;

pub use bench::{
    evaluate_alignment, labeled_features, point_embeddings, probe_benchmark, scene_config, scene_seed, stage1_images,
    voxel_correspondences, AlignmentEval,
};
pub use stage1::{pretrain_2d, pretrain_2d_with, stage1_objective, Stage1Batch, Stage1Eval, Stage1Pair};
pub use stage2::{
    center_crop, prepare_scene, pretrain_3d, pretrain_3d_with, stage2_objective, FrozenTargets, PreparedScene, PreparedView,
    Stage2Eval, Stage2Sample,
};

pub const HEAD2D_PREFIX: &str = "head2d";
pub const HEAD3D_PREFIX: &str = "head3d";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("iteration {iteration}: every scene was skipped ({reasons})")]
    IterationStarved { iteration: usize, reasons: String },
    #[error("iteration {iteration}: loss is not finite; replay with {replay}")]
    NonFiniteLoss { iteration: usize, replay: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Encoder plus decoder head, trained and checkpointed together.
#[derive(Clone, Debug, PartialEq)]
pub struct Model2D {
    pub encoder: EncoderParams2D,
    pub head: HeadParams,
}

impl Model2D {
    pub fn new(embed_dim: usize, head_dim: usize, seed: u64) -> Self {
        Self {
            encoder: EncoderParams2D::new(embed_dim, seed::derive(seed, &[0x2d, 0])),
            head: HeadParams::new(HEAD2D_PREFIX, embed_dim, head_dim, seed::derive(seed, &[0x2d, 1])),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.tensors().into_iter().cloned().collect())
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, NnError> {
        let encoder = EncoderParams2D::from_tensors(&c.tensors)?;
        let head = HeadParams::from_tensors(HEAD2D_PREFIX, &c.tensors)?;
        if head.in_dim() != encoder.dim() {
            return Err(NnError::Shape(format!("2D head expects {} inputs, encoder gives {}", head.in_dim(), encoder.dim())));
        }
        Ok(Self { encoder, head })
    }
}

impl ParamSet for Model2D {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model3D {
    pub encoder: EncoderParams3D,
    pub head: HeadParams,
}

impl Model3D {
    pub fn new(embed_dim: usize, head_dim: usize, k: usize, seed: u64) -> Self {
        Self {
            encoder: EncoderParams3D::new(embed_dim, k, seed::derive(seed, &[0x3d, 0])),
            head: HeadParams::new(HEAD3D_PREFIX, embed_dim, head_dim, seed::derive(seed, &[0x3d, 1])),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.encoder.to_tensors());
        c.extend(self.head.tensors().into_iter().cloned());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, NnError> {
        let encoder = EncoderParams3D::from_tensors(&c.tensors)?;
        let head = HeadParams::from_tensors(HEAD3D_PREFIX, &c.tensors)?;
        if head.in_dim() != encoder.dim() {
            return Err(NnError::Shape(format!("3D head expects {} inputs, encoder gives {}", head.in_dim(), encoder.dim())));
        }
        Ok(Self { encoder, head })
    }
}

impl ParamSet for Model3D {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
}

/// FNV-1a over the bit patterns, for cheap immutability checks.
pub fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Config {
    pub batch_pairs: usize,
    pub pixels_per_pair: usize,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub iterations: usize,
    pub view_a: TransformSpec2D,
    pub view_b: TransformSpec2D,
    pub embed_dim: usize,
    pub head_dim: usize,
    pub seed: u64,
}

/// Crop, flip, colour jitter and greyscale, SimCLR style.
pub fn default_view_spec(out: (usize, usize)) -> TransformSpec2D {
    TransformSpec2D {
        transforms: vec![
            Transform2D::RandomResizedCrop { scale: (0.35, 1.0), out_size: out },
            Transform2D::HorizontalFlip { p: 0.5 },
            Transform2D::ColorJitter { brightness: 0.4, contrast: 0.4, saturation: 0.4 },
            Transform2D::Grayscale { p: 0.2 },
        ],
    }
}

impl Stage1Config {
    /// Full-scale hyperparameters.
    pub fn full() -> Self {
        Self {
            batch_pairs: 64,
            pixels_per_pair: 4092,
            loss: LossConfig { tau: 0.4, negatives: NegativeCount::AllInBatch },
            optim: OptimConfig::with_lr(0.01),
            iterations: 20_000,
            view_a: default_view_spec((224, 224)),
            view_b: default_view_spec((224, 224)),
            embed_dim: 16,
            head_dim: 16,
            seed: 0,
        }
    }

    /// Shrunk batch, pixel and negative counts for single-core runs on 64×64 images.
    pub fn desk() -> Self {
        Self {
            batch_pairs: 8,
            pixels_per_pair: 512,
            loss: LossConfig { tau: 0.4, negatives: NegativeCount::PerQuery(31) },
            optim: OptimConfig::with_lr(3e-6),
            iterations: 500,
            view_a: default_view_spec((48, 48)),
            view_b: default_view_spec((48, 48)),
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.batch_pairs == 0 {
            return bad("stage1 batch_pairs must be at least 1");
        }
        if self.pixels_per_pair < 2 {
            return bad("stage1 pixels_per_pair must be at least 2");
        }
        if self.head_dim == 0 || self.head_dim > self.embed_dim {
            return bad("stage1 head_dim must lie in 1..=embed_dim");
        }
        self.loss.validate()?;
        self.optim.validate()?;
        self.view_a.validate()?;
        self.view_b.validate()?;
        Ok(())
    }
}

/// Which in-batch rows serve as Stage-2 negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NegativeSource {
    PointsOnly,
    PointsAndPixels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Config {
    pub batch_pairs: usize,
    pub correspondences_per_pair: usize,
    /// Centre crop `(width, height)` applied to images before the frozen encoder.
    pub crop: Option<(usize, usize)>,
    pub voxel_size: f64,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub iterations: usize,
    pub negative_source: NegativeSource,
    pub cloud_aug: TransformSpec3D,
    pub embed_dim: usize,
    pub head_dim: usize,
    pub k: usize,
    pub seed: u64,
}

pub fn default_cloud_spec() -> TransformSpec3D {
    TransformSpec3D {
        transforms: vec![
            Transform3D::RotationZ { angle_range: (0.0, 6.28) },
            Transform3D::PointDropout { keep_prob: 0.9 },
            Transform3D::ColorJitter3D { brightness: 0.1, contrast: 0.1 },
        ],
    }
}

impl Stage2Config {
    pub fn full() -> Self {
        Self {
            batch_pairs: 8,
            correspondences_per_pair: 2000,
            crop: Some((224, 224)),
            voxel_size: 0.05,
            loss: LossConfig { tau: 0.4, negatives: NegativeCount::AllInBatch },
            optim: OptimConfig::with_lr(0.1),
            iterations: 20_000,
            negative_source: NegativeSource::PointsOnly,
            cloud_aug: default_cloud_spec(),
            embed_dim: 16,
            head_dim: 16,
            k: crate::nn::DEFAULT_K,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            correspondences_per_pair: 256,
            crop: None,
            loss: LossConfig { tau: 0.4, negatives: NegativeCount::PerQuery(31) },
            optim: OptimConfig::with_lr(1e-3),
            iterations: 500,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.batch_pairs == 0 {
            return bad("stage2 batch_pairs must be at least 1");
        }
        if self.correspondences_per_pair < 2 {
            return bad("stage2 correspondences_per_pair must be at least 2");
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad("stage2 voxel_size must be positive");
        }
        if self.head_dim == 0 || self.head_dim > self.embed_dim || self.k == 0 {
            return bad("stage2 head_dim must lie in 1..=embed_dim and k must be positive");
        }
        if matches!(self.crop, Some((0, _)) | Some((_, 0))) {
            return bad("stage2 crop must be positive");
        }
        self.loss.validate()?;
        self.optim.validate()?;
        self.cloud_aug.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Summed objective that was minimised.
    pub loss: f64,
    pub loss_per_query: f64,
    pub alignment_gap: f64,
    pub lr: f64,
    /// Pairs or scenes dropped from the batch.
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub history: Vec<IterationRecord>,
    /// Wall-clock time per iteration (not part of the CSV, which must be reproducible).
    pub wall: Vec<Duration>,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "iteration,loss,loss_per_query,alignment_gap,lr";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.history {
            writeln!(s, "{},{:e},{:e},{:e},{:e}", r.iteration, r.loss, r.loss_per_query, r.alignment_gap, r.lr)
                .expect("write to String");
        }
        s
    }

    pub fn total_wall(&self) -> Duration {
        self.wall.iter().sum()
    }

    /// Mean per-query loss over the first `n` iterations.
    pub fn head_mean(&self, n: usize) -> f64 {
        mean(self.history.iter().take(n).map(|r| r.loss_per_query))
    }

    /// Mean per-query loss over the last `n` iterations.
    pub fn tail_mean(&self, n: usize) -> f64 {
        mean(self.history.iter().rev().take(n).map(|r| r.loss_per_query))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { s / n as f64 }
}
