//! Workflow helpers shared by the command line and the desk benchmarks.

use std::collections::HashSet;

use super::{Model3D, PipelineError, PreparedScene};
use crate::eval::{
    labeled_subset, linear_probe, matched_cosine, retrieval_accuracy, sample_correspondences, InitKind, LabeledFeatures,
    ProbeRecord, ProbeSettings,
};
use crate::geometry::{build_correspondences, CorrespondenceSet, Image, PointCloud};
use crate::nn::{decode_normalize, encode_points, EmbeddingSet};
use crate::seed;
use crate::synthdata::{SceneConfig, SyntheticScene};

/// Seed of the `index`-th generated scene.
pub fn scene_seed(base: u64, index: usize) -> u64 {
    seed::derive(base, &[0x5c, index as u64])
}

pub fn scene_config(template: &SceneConfig, base: u64, index: usize) -> SceneConfig {
    SceneConfig { seed: scene_seed(base, index), ..template.clone() }
}

/// The Stage-1 dataset: the first view of every scene.
pub fn stage1_images(scenes: &[SyntheticScene]) -> Vec<Image> {
    scenes.iter().filter_map(|s| s.views.first()).map(|v| v.image.clone()).collect()
}

/// Normalized point embeddings of every point in `cloud`.
pub fn point_embeddings(model: &Model3D, cloud: &PointCloud) -> Result<EmbeddingSet, PipelineError> {
    let f = encode_points(&model.encoder, cloud)?;
    Ok(decode_normalize(&model.head, &f.data)?)
}

/// Ground truth of `view` re-indexed onto the voxelized cloud, keeping the first pixel
/// of each voxel so that every query point is distinct.
pub fn voxel_correspondences(prepared: &PreparedScene, gt: &CorrespondenceSet) -> CorrespondenceSet {
    let mut seen = HashSet::new();
    let entries = gt
        .entries
        .iter()
        .filter_map(|e| prepared.voxel_map.get(e.point_index).map(|v| (v, e)))
        .filter(|(v, _)| seen.insert(*v))
        .map(|(v, e)| {
            let mut e = *e;
            e.point_index = v;
            e
        })
        .collect();
    CorrespondenceSet { camera_id: gt.camera_id, entries }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentEval {
    pub pairs: usize,
    /// Top-1 point→pixel retrieval among the sampled pairs.
    pub top1: f64,
    pub chance: f64,
    pub mean_cosine: f64,
}

/// Cross-modal agreement on `count` sampled ground-truth pairs of one prepared view.
/// Ground truth is rebuilt from the raw cloud with the view's (possibly cropped) camera.
pub fn evaluate_alignment(
    model: &Model3D,
    prepared: &PreparedScene,
    raw: &PointCloud,
    view: usize,
    count: usize,
    seed: u64,
) -> Result<AlignmentEval, PipelineError> {
    let v = prepared
        .views
        .get(view)
        .ok_or_else(|| PipelineError::InvalidConfig(format!("view {view} does not exist")))?;
    let gt = build_correspondences(raw, &v.pose, &v.intrinsics);
    let pairs = sample_correspondences(&voxel_correspondences(prepared, &gt), count, seed);
    if pairs.is_empty() {
        return Err(PipelineError::InvalidConfig(format!("view {view} has no correspondences")));
    }
    let points = point_embeddings(model, &prepared.cloud)?;
    Ok(AlignmentEval {
        pairs: pairs.len(),
        top1: retrieval_accuracy(&points, &v.embeddings, &pairs, v.width())?,
        chance: 1.0 / pairs.len() as f64,
        mean_cosine: matched_cosine(&points, &v.embeddings, &pairs, v.width())?,
    })
}

/// Encoder features of every labelled point, concatenated over clouds.
pub fn labeled_features(model: &Model3D, clouds: &[PointCloud]) -> Result<LabeledFeatures, PipelineError> {
    let parts = clouds
        .iter()
        .map(|c| {
            let labels = c.labels.clone().ok_or_else(|| PipelineError::InvalidConfig("probe clouds need labels".into()))?;
            let f = encode_points(&model.encoder, c)?;
            Ok(LabeledFeatures::new(f.dim, f.data, labels)?)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(LabeledFeatures::concat(&parts)?)
}

/// Linear probes on frozen `pretrained` features and on randomly initialised encoders of
/// the same shape, for every fraction and seed. Within a seed both initialisations see
/// the same labelled rows.
pub fn probe_benchmark(
    pretrained: &Model3D,
    train: &[PointCloud],
    test: &[PointCloud],
    settings: &ProbeSettings,
    base_seed: u64,
) -> Result<Vec<ProbeRecord>, PipelineError> {
    settings.validate()?;
    let (embed_dim, head_dim, k) = (pretrained.encoder.dim(), pretrained.head.out_dim(), pretrained.encoder.k);
    let pool = |f: LabeledFeatures| {
        if settings.pool == 0 || settings.pool >= f.rows() {
            f
        } else {
            let frac = settings.pool as f64 / f.rows() as f64;
            f.select(&labeled_subset(f.rows(), frac, seed::derive(base_seed, &[0x7c])))
        }
    };
    let pre = (pool(labeled_features(pretrained, train)?), labeled_features(pretrained, test)?);
    let mut records = Vec::new();
    for s in 0..settings.seeds as u64 {
        let random = Model3D::new(embed_dim, head_dim, k, seed::derive(base_seed, &[0x7a, s]));
        let rnd = (pool(labeled_features(&random, train)?), labeled_features(&random, test)?);
        for &fraction in &settings.fractions {
            let cfg = settings.probe_config(fraction, seed::derive(base_seed, &[0x7b, s]));
            for (init, (tr, te)) in [(InitKind::Pretrained, &pre), (InitKind::Random, &rnd)] {
                let r = linear_probe(tr, te, &cfg)?;
                log::info!("probe fraction {fraction} {init} seed {s}: mIoU {:.4}", r.miou);
                records.push(ProbeRecord { label_fraction: fraction, init, seed: s, miou: r.miou });
            }
        }
    }
    Ok(records)
}
