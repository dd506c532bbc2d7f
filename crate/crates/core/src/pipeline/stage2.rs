use std::hash::{DefaultHasher, Hash, Hasher};
use std::time::Instant;

use rand::seq::index;
use rand::Rng;

use super::{fingerprint, IterationRecord, Model2D, Model3D, NegativeSource, PipelineError, Stage2Config, TrainReport};
use crate::augment::augment_cloud;
use crate::geometry::{build_correspondences, voxelize, CameraIntrinsics, Image, IndexMap, PointCloud, Pose};
use crate::loss::{info_nce_in_batch, LossConfig, LossOutput, NegativePool};
use crate::nn::{decode_normalize, encode_image, EmbeddingSet, Encoder3dTape, HeadTape, ParamSet};
use crate::optim::{sgd_step, OptimState};
use crate::seed;
use crate::synthdata::SyntheticScene;

/// Centre crop to `(width, height)`; the principal point shifts with the window.
pub fn center_crop(
    img: &Image,
    intr: &CameraIntrinsics,
    (width, height): (usize, usize),
) -> Result<(Image, CameraIntrinsics), PipelineError> {
    if width == 0 || height == 0 || width > img.width || height > img.height {
        return Err(PipelineError::InvalidConfig(format!(
            "cannot crop {width}x{height} from a {}x{} image",
            img.width, img.height
        )));
    }
    let x0 = (img.width - width) / 2;
    let y0 = (img.height - height) / 2;
    let mut out = Image::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            out.set(x, y, img.get(x0 + x, y0 + y));
        }
    }
    let cropped = CameraIntrinsics::new(
        intr.fx,
        intr.fy,
        intr.cx - x0 as f64,
        intr.cy - y0 as f64,
        width as u32,
        height as u32,
    )?;
    Ok((out, cropped))
}

/// One camera with the frozen per-pixel embeddings of its image, row `y·width + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub embeddings: EmbeddingSet,
}

impl PreparedView {
    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedScene {
    /// Voxelized cloud the point encoder sees.
    pub cloud: PointCloud,
    /// Raw point index → voxel index.
    pub voxel_map: IndexMap,
    pub views: Vec<PreparedView>,
}

/// Voxelizes the cloud, crops each image and runs the frozen image model over it.
pub fn prepare_scene(
    scene: &SyntheticScene,
    model: &Model2D,
    crop: Option<(usize, usize)>,
    voxel_size: f64,
) -> Result<PreparedScene, PipelineError> {
    let (cloud, voxel_map) = voxelize(&scene.cloud, voxel_size)?;
    let mut views = Vec::with_capacity(scene.views.len());
    for v in &scene.views {
        let (image, intrinsics) = match crop {
            Some(c) => center_crop(&v.image, &v.intrinsics, c)?,
            None => (v.image.clone(), v.intrinsics),
        };
        let features = encode_image(&model.encoder, &image)?;
        let embeddings = decode_normalize(&model.head, &features.data)?;
        views.push(PreparedView { pose: v.pose, intrinsics, embeddings });
    }
    Ok(PreparedScene { cloud, voxel_map, views })
}

/// Pixel embeddings computed once by the frozen image model. Stage 2 only reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenTargets {
    pub scenes: Vec<PreparedScene>,
    pub dim: usize,
}

impl FrozenTargets {
    pub fn build(scenes: &[SyntheticScene], model: &Model2D, cfg: &Stage2Config) -> Result<Self, PipelineError> {
        let scenes = scenes
            .iter()
            .map(|s| prepare_scene(s, model, cfg.crop, cfg.voxel_size))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { scenes, dim: model.head.out_dim() })
    }

    /// Hash over every stored embedding value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for s in &self.scenes {
            for v in &s.views {
                fingerprint(&v.embeddings.data).hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Matched points of an augmented cloud and the frozen embeddings of their pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Sample {
    pub cloud: PointCloud,
    pub points: Vec<usize>,
    pub targets: EmbeddingSet,
}

#[derive(Clone, Debug)]
pub struct Stage2Eval {
    pub output: LossOutput,
    pub grads: Model3D,
    pub regime: u64,
    pub queries: EmbeddingSet,
}

/// Summed InfoNCE of point embeddings against their pixel targets. Negatives are the
/// other points of the batch, plus the other pixels under `PointsAndPixels`. Targets are
/// constants, so gradients reach the point model only.
pub fn stage2_objective(
    model: &Model3D,
    samples: &[Stage2Sample],
    loss: &LossConfig,
    negatives: NegativeSource,
    neg_seed: u64,
) -> Result<Stage2Eval, PipelineError> {
    let m = model.head.out_dim();
    let mut queries = EmbeddingSet::empty(m);
    let mut positives = EmbeddingSet::empty(m);
    let mut tapes = Vec::with_capacity(samples.len());
    let mut hasher = DefaultHasher::new();
    for s in samples {
        if s.targets.dim != m || s.targets.rows != s.points.len() {
            return Err(PipelineError::InvalidConfig(format!(
                "sample has {} points and {}x{} targets for head width {m}",
                s.points.len(),
                s.targets.rows,
                s.targets.dim
            )));
        }
        let tape = Encoder3dTape::forward_at(&model.encoder, &s.cloud, &s.points)?;
        let head = HeadTape::forward(&model.head, &tape.features)?;
        queries.data.extend_from_slice(&head.embeddings.data);
        queries.rows += head.embeddings.rows;
        positives.data.extend_from_slice(&s.targets.data);
        positives.rows += s.targets.rows;
        tape.regime().hash(&mut hasher);
        tapes.push((tape, head));
    }
    let pool = match negatives {
        NegativeSource::PointsOnly => NegativePool::QueriesOnly,
        NegativeSource::PointsAndPixels => NegativePool::QueriesAndPositives,
    };
    let output = info_nce_in_batch(&queries, &positives, pool, loss, neg_seed)?;

    let mut grads = model.zeros_like();
    let mut offset = 0;
    for (tape, head) in &tapes {
        let rows = tape.len() * m;
        let d_feat = head.backward(&model.head, &output.grad_queries[offset..offset + rows], &mut grads.head);
        tape.backward(&model.encoder, &d_feat, &mut grads.encoder);
        offset += rows;
    }
    Ok(Stage2Eval { output, grads, regime: hasher.finish(), queries })
}

/// Augments the scene cloud, re-projects it into the chosen view under the moved pose
/// and keeps up to `count` visible points. `None` with fewer than two matches.
fn draw_sample(scene: &PreparedScene, view: usize, cfg: &Stage2Config, seed: u64) -> Result<Option<Stage2Sample>, PipelineError> {
    let aug = augment_cloud(&scene.cloud, &cfg.cloud_aug, seed::derive(seed, &[0]))?;
    let v = &scene.views[view];
    let pose = v.pose.compose(&aug.rigid.inverse());
    let corr = build_correspondences(&aug.cloud, &pose, &v.intrinsics);
    if corr.len() < 2 {
        return Ok(None);
    }
    let take = cfg.correspondences_per_pair.min(corr.len());
    let mut picked = index::sample(&mut seed::rng(seed::derive(seed, &[1])), corr.len(), take).into_vec();
    picked.sort_unstable();
    let w = v.width();
    let mut targets = EmbeddingSet::empty(v.embeddings.dim);
    let mut points = Vec::with_capacity(take);
    for i in picked {
        let e = &corr.entries[i];
        points.push(e.point_index);
        targets.push(v.embeddings.row(e.pixel[1] as usize * w + e.pixel[0] as usize));
    }
    Ok(Some(Stage2Sample { cloud: aug.cloud, points, targets }))
}

pub fn pretrain_3d(targets: &FrozenTargets, cfg: &Stage2Config) -> Result<(Model3D, TrainReport), PipelineError> {
    pretrain_3d_with(targets, cfg, |_, _| {})
}

/// [`pretrain_3d`] with a callback that sees every iteration's evaluation before the update.
pub fn pretrain_3d_with(
    targets: &FrozenTargets,
    cfg: &Stage2Config,
    mut observe: impl FnMut(usize, &Stage2Eval),
) -> Result<(Model3D, TrainReport), PipelineError> {
    cfg.validate()?;
    if targets.scenes.iter().all(|s| s.views.is_empty()) {
        return Err(PipelineError::EmptyDataset);
    }
    if targets.dim != cfg.head_dim {
        return Err(PipelineError::InvalidConfig(format!(
            "frozen targets are {}-dimensional but the 3D head outputs {}",
            targets.dim, cfg.head_dim
        )));
    }
    let views: Vec<(usize, usize)> = targets
        .scenes
        .iter()
        .enumerate()
        .flat_map(|(s, sc)| (0..sc.views.len()).map(move |v| (s, v)))
        .collect();
    let mut model = Model3D::new(cfg.embed_dim, cfg.head_dim, cfg.k, cfg.seed);
    let mut state = OptimState::new();
    let mut report = TrainReport::default();
    for it in 0..cfg.iterations {
        let start = Instant::now();
        let mut rng = seed::rng(seed::derive(cfg.seed, &[1, it as u64]));
        let mut samples = Vec::with_capacity(cfg.batch_pairs);
        let mut reasons = Vec::new();
        for slot in 0..cfg.batch_pairs {
            let (s, v) = views[rng.random_range(0..views.len())];
            match draw_sample(&targets.scenes[s], v, cfg, seed::derive(cfg.seed, &[2, it as u64, slot as u64]))? {
                Some(sample) => samples.push(sample),
                None => {
                    log::warn!("iteration {it}: scene {s} view {v} has fewer than 2 correspondences; skipped");
                    reasons.push(format!("scene {s} view {v}: fewer than 2 correspondences"));
                }
            }
        }
        if samples.is_empty() {
            return Err(PipelineError::IterationStarved { iteration: it, reasons: reasons.join("; ") });
        }
        let eval = stage2_objective(&model, &samples, &cfg.loss, cfg.negative_source, seed::derive(cfg.seed, &[3, it as u64]))?;
        if !eval.output.total.is_finite() {
            return Err(PipelineError::NonFiniteLoss { iteration: it, replay: format!("stage2 seed={} iteration={it}", cfg.seed) });
        }
        observe(it, &eval);
        let lr = sgd_step(&mut model, &eval.grads, &mut state, &cfg.optim)?;
        report.history.push(IterationRecord {
            iteration: it,
            loss: eval.output.total,
            loss_per_query: eval.output.mean(),
            alignment_gap: eval.output.alignment_gap(),
            lr,
            skipped: reasons.len(),
        });
        report.wall.push(start.elapsed());
        log::debug!("stage2 it {it}: loss/query {:.4} gap {:.4}", eval.output.mean(), eval.output.alignment_gap());
    }
    Ok((model, report))
}
