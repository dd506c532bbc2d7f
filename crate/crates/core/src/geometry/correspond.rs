use super::camera::{project_point, CameraIntrinsics, Pose};
use super::PointCloud;

/// One z-buffer winner: a cloud point and the pixel it lands on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub point_index: usize,
    /// Continuous column.
    pub u: f64,
    /// Continuous row.
    pub v: f64,
    pub depth: f64,
    /// Integer pixel `[col, row]` the point was bucketed into.
    pub pixel: [u32; 2],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub camera_id: usize,
    /// Sorted by pixel in row-major order; at most one entry per pixel.
    pub entries: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Integer pixel for continuous in-frame coordinates: round half up, clamped to the
/// last row/column so that the band `[w - 0.5, w)` stays in the image.
#[inline]
pub fn pixel_of(u: f64, v: f64, intr: &CameraIntrinsics) -> [u32; 2] {
    let col = ((u + 0.5).floor() as u32).min(intr.width - 1);
    let row = ((v + 0.5).floor() as u32).min(intr.height - 1);
    [col, row]
}

/// Projects every point and keeps the nearest one per pixel; equal depths go to the
/// lower point index.
pub fn build_correspondences(cloud: &PointCloud, pose: &Pose, intr: &CameraIntrinsics) -> CorrespondenceSet {
    let w = intr.width as usize;
    let mut zbuf: Vec<Option<Correspondence>> = vec![None; w * intr.height as usize];
    for i in 0..cloud.len() {
        let Ok(p) = project_point(cloud.position(i), pose, intr) else {
            continue;
        };
        let pixel = pixel_of(p.u, p.v, intr);
        let slot = &mut zbuf[pixel[1] as usize * w + pixel[0] as usize];
        // strict comparison: ascending index order makes the lowest index win ties
        if slot.is_none_or(|cur| p.depth < cur.depth) {
            *slot = Some(Correspondence { point_index: i, u: p.u, v: p.v, depth: p.depth, pixel });
        }
    }
    CorrespondenceSet { camera_id: 0, entries: zbuf.into_iter().flatten().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    fn cloud(points: &[[f32; 3]]) -> PointCloud {
        PointCloud::new(points.to_vec(), vec![[0.5; 3]; points.len()], None).unwrap()
    }

    #[test]
    fn nearer_point_on_same_ray_wins() {
        let c = cloud(&[[0.2, 0.2, 2.0], [0.1, 0.1, 1.0]]);
        let set = build_correspondences(&c, &Pose::identity(), &cam());
        assert_eq!(set.len(), 1);
        assert_eq!(set.entries[0].point_index, 1);
        assert_eq!(set.entries[0].pixel, [60, 60]);
    }

    #[test]
    fn depth_tie_goes_to_lowest_index() {
        let c = cloud(&[[0.0, 0.0, 1.0], [0.001, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        let set = build_correspondences(&c, &Pose::identity(), &cam());
        assert_eq!(set.len(), 1);
        assert_eq!(set.entries[0].point_index, 0);
    }

    #[test]
    fn out_of_frustum_is_absent() {
        let c = cloud(&[[0.0, 0.0, -1.0]]);
        assert!(build_correspondences(&c, &Pose::identity(), &cam()).is_empty());
        let c = cloud(&[[3.0, 0.0, 1.0]]);
        assert!(build_correspondences(&c, &Pose::identity(), &cam()).is_empty());
        assert!(build_correspondences(&PointCloud::default(), &Pose::identity(), &cam()).is_empty());
    }

    #[test]
    fn rounding_is_half_up_and_clamped() {
        let c = cam();
        assert_eq!(pixel_of(0.49, 0.5, &c), [0, 1]);
        assert_eq!(pixel_of(99.7, 99.2, &c), [99, 99]);
    }
}
