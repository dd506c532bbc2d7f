use rand::Rng;

use super::{AugmentError, Transform3D, TransformSpec3D};
use crate::geometry::linalg;
use crate::geometry::{IndexMap, PointCloud, Pose};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct CloudAugmentation {
    pub cloud: PointCloud,
    /// Original point index → index in `cloud`.
    pub index_map: IndexMap,
    /// World-frame rigid motion applied to the surviving points.
    pub rigid: Pose,
}

/// Rotations about +z through the origin, independent point dropout and global color
/// jitter, applied in spec order.
pub fn augment_cloud(cloud: &PointCloud, spec: &TransformSpec3D, seed: u64) -> Result<CloudAugmentation, AugmentError> {
    spec.validate()?;
    if cloud.is_empty() {
        return Err(AugmentError::EmptyCloud);
    }
    let mut rng = seed::rng(seed);
    let mut out = cloud.clone();
    let mut index_map = IndexMap::identity(cloud.len());
    let mut rigid = Pose::identity();

    for t in &spec.transforms {
        match *t {
            Transform3D::RotationZ { angle_range: (lo, hi) } => {
                let angle = lo + (hi - lo) * rng.random::<f64>();
                let rot = linalg::rot_z(angle);
                for p in out.positions.iter_mut() {
                    let q = linalg::mat_vec(&rot, p.map(f64::from));
                    *p = q.map(|x| x as f32);
                }
                rigid = Pose { rotation: rot, translation: [0.0; 3] }.compose(&rigid);
            }
            Transform3D::PointDropout { keep_prob } => {
                let mut step = Vec::with_capacity(out.len());
                let mut kept = Vec::new();
                for i in 0..out.len() {
                    if rng.random::<f64>() < keep_prob {
                        step.push(Some(kept.len()));
                        kept.push(i);
                    } else {
                        step.push(None);
                    }
                }
                if kept.is_empty() {
                    return Err(AugmentError::EmptyCloud);
                }
                out = out.select(&kept);
                index_map = index_map.then(&IndexMap::new(step));
            }
            Transform3D::ColorJitter3D { brightness, contrast } => {
                let b = 1.0 - brightness + 2.0 * brightness * rng.random::<f64>();
                let c = 1.0 - contrast + 2.0 * contrast * rng.random::<f64>();
                let n = out.len() as f64;
                let mut mean = [0.0f64; 3];
                for col in &out.colors {
                    for k in 0..3 {
                        mean[k] += col[k] as f64 * b / n;
                    }
                }
                for col in out.colors.iter_mut() {
                    for k in 0..3 {
                        let x = col[k] as f64 * b;
                        col[k] = (mean[k] + c * (x - mean[k])).clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    Ok(CloudAugmentation { cloud: out, index_map, rigid })
}
