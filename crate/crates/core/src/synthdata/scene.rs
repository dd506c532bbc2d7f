use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::SynthError;
use crate::geometry::linalg::{self, Vec3};
use crate::geometry::{build_correspondences, CameraIntrinsics, CorrespondenceSet, Image, PointCloud, Pose};
use crate::seed;

pub const FLOOR: u32 = 0;
pub const WALL: u32 = 1;
pub const CEILING: u32 = 2;

/// Pixels that no point lands on.
pub const BACKGROUND: [f64; 3] = [0.5, 0.5, 0.5];

const CAMERA_TRIES: usize = 100;
const BOX_TRIES: usize = 200;

/// Appearance of one class, plus the size range used when it is instantiated as a box.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassStyle {
    pub albedo: [f64; 3],
    /// Amplitude of a sinusoidal stripe pattern added to every channel.
    pub stripe_amp: f64,
    /// Stripe frequency in cycles per metre.
    pub stripe_freq: f64,
    /// Stripe direction in world coordinates (normalised on use).
    pub stripe_dir: [f64; 3],
    pub size_min: [f64; 3],
    pub size_max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    /// Room extents along x, y (floor) and z (height), in metres.
    pub room: [f64; 3],
    pub num_objects: usize,
    /// Class ids a box may take; each must index into `styles`.
    pub object_classes: Vec<u32>,
    /// Per class id; ids 0, 1, 2 are floor, wall and ceiling.
    pub styles: Vec<ClassStyle>,
    /// Half-width of the uniform per-object colour offset.
    pub object_jitter: f64,
    /// Standard deviation of per-point colour noise.
    pub color_noise: f64,
    pub points: usize,
    pub cameras: usize,
    pub image_size: (u32, u32),
    /// Horizontal field of view in radians.
    pub fov_x: f64,
    pub seed: u64,
}

fn style(albedo: [f64; 3], amp: f64, freq: f64, dir: [f64; 3], size_min: [f64; 3], size_max: [f64; 3]) -> ClassStyle {
    ClassStyle { albedo, stripe_amp: amp, stripe_freq: freq, stripe_dir: dir, size_min, size_max }
}

impl Default for SceneConfig {
    fn default() -> Self {
        let none = [0.0; 3];
        Self {
            room: [3.0, 3.0, 2.4],
            num_objects: 4,
            object_classes: vec![3, 4, 5],
            styles: vec![
                style([0.55, 0.45, 0.35], 0.10, 2.0, [1.0, 0.0, 0.0], none, none),
                style([0.75, 0.75, 0.70], 0.05, 1.0, [0.0, 0.0, 1.0], none, none),
                style([0.85, 0.85, 0.85], 0.0, 1.0, [1.0, 0.0, 0.0], none, none),
                style([0.60, 0.30, 0.30], 0.15, 6.0, [0.0, 0.0, 1.0], [0.3, 0.3, 0.3], [0.5, 0.5, 0.5]),
                style([0.40, 0.35, 0.30], 0.15, 4.0, [1.0, 1.0, 0.0], [0.8, 0.6, 0.4], [1.2, 0.9, 0.7]),
                style([0.35, 0.45, 0.55], 0.15, 3.0, [1.0, 0.0, 0.0], [0.4, 0.4, 1.0], [0.6, 0.6, 1.6]),
            ],
            object_jitter: 0.08,
            color_noise: 0.02,
            points: 200_000,
            cameras: 2,
            image_size: (64, 64),
            fov_x: 70f64.to_radians(),
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !self.room.iter().all(|&e| e > 0.0 && e.is_finite()) {
            return bad(format!("room extents {:?} must be positive", self.room));
        }
        if self.room[2] <= 1.2 {
            return bad("room height must exceed 1.2 m to fit cameras".into());
        }
        if self.points < 100 {
            return bad(format!("{} points, need at least 100", self.points));
        }
        if self.cameras == 0 {
            return bad("need at least one camera".into());
        }
        if self.styles.len() < 4 {
            return bad("need at least four classes including floor, wall and ceiling".into());
        }
        if self.num_objects > 0 && self.object_classes.is_empty() {
            return bad("objects requested but no object classes given".into());
        }
        for &c in &self.object_classes {
            let Some(s) = self.styles.get(c as usize) else {
                return bad(format!("object class {c} has no style"));
            };
            if c <= CEILING {
                return bad(format!("class {c} is reserved for room surfaces"));
            }
            if !(0..3).all(|a| s.size_min[a] > 0.0 && s.size_min[a] <= s.size_max[a]) {
                return bad(format!("class {c} has an invalid size range"));
            }
        }
        for s in &self.styles {
            if !s.albedo.iter().chain([&s.stripe_amp, &s.stripe_freq]).all(|x| x.is_finite())
                || linalg::norm(s.stripe_dir) == 0.0
            {
                return bad("class styles must be finite with a nonzero stripe direction".into());
            }
        }
        if !(self.object_jitter >= 0.0 && self.color_noise >= 0.0) {
            return bad("colour jitter and noise must be non-negative".into());
        }
        let (w, h) = self.image_size;
        if w < 3 || h < 3 {
            return bad(format!("image size {w}x{h} is below 3x3"));
        }
        if !(self.fov_x > 0.0 && self.fov_x < std::f64::consts::PI) {
            return bad(format!("field of view {} outside (0, π)", self.fov_x));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneView {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub image: Image,
    pub correspondences: CorrespondenceSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub cloud: PointCloud,
    pub views: Vec<SceneView>,
}

/// Planar rectangle `origin + a·e1 + b·e2`, `a, b ∈ [0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct Surface {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub class: u32,
    pub object: usize,
}

impl Surface {
    pub fn area(&self) -> f64 {
        linalg::norm(linalg::cross(self.e1, self.e2))
    }

    fn at(&self, a: f64, b: f64) -> Vec3 {
        linalg::add(self.origin, linalg::add(linalg::scale(self.e1, a), linalg::scale(self.e2, b)))
    }
}

/// Axis-aligned box resting on the floor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneBox {
    pub min: Vec3,
    pub max: Vec3,
    pub class: u32,
}

impl SceneBox {
    fn overlaps_xy(&self, other: &SceneBox, gap: f64) -> bool {
        (0..2).all(|a| self.min[a] < other.max[a] + gap && other.min[a] < self.max[a] + gap)
    }

    fn contains_xy(&self, p: Vec3) -> bool {
        (0..2).all(|a| p[a] > self.min[a] && p[a] < self.max[a])
    }

    fn inflated_contains(&self, p: Vec3, margin: f64) -> bool {
        (0..3).all(|a| p[a] > self.min[a] - margin && p[a] < self.max[a] + margin)
    }
}

fn place_boxes(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<Vec<SceneBox>, SynthError> {
    const MARGIN: f64 = 0.05;
    let mut boxes: Vec<SceneBox> = Vec::with_capacity(cfg.num_objects);
    for i in 0..cfg.num_objects {
        let class = cfg.object_classes[i % cfg.object_classes.len()];
        let st = &cfg.styles[class as usize];
        let mut placed = false;
        for _ in 0..BOX_TRIES {
            let size: Vec3 = std::array::from_fn(|a| st.size_min[a] + (st.size_max[a] - st.size_min[a]) * rng.random::<f64>());
            let free = [cfg.room[0] - size[0] - 2.0 * MARGIN, cfg.room[1] - size[1] - 2.0 * MARGIN];
            if free[0] <= 0.0 || free[1] <= 0.0 || size[2] >= cfg.room[2] {
                continue;
            }
            let x = MARGIN + free[0] * rng.random::<f64>();
            let y = MARGIN + free[1] * rng.random::<f64>();
            let b = SceneBox { min: [x, y, 0.0], max: [x + size[0], y + size[1], size[2]], class };
            if boxes.iter().all(|o| !o.overlaps_xy(&b, MARGIN)) {
                boxes.push(b);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(SynthError::PlacementFailure { what: format!("box {i}"), tries: BOX_TRIES });
        }
    }
    Ok(boxes)
}

/// Room shell plus five visible faces of each box, with object ids in that order.
pub fn surfaces(room: [f64; 3], boxes: &[SceneBox]) -> Vec<Surface> {
    let [x, y, z] = room;
    let s = |origin, e1, e2, class, object| Surface { origin, e1, e2, class, object };
    let mut out = vec![
        s([0.0, 0.0, 0.0], [x, 0.0, 0.0], [0.0, y, 0.0], FLOOR, 0),
        s([0.0, 0.0, z], [x, 0.0, 0.0], [0.0, y, 0.0], CEILING, 1),
        s([0.0, 0.0, 0.0], [x, 0.0, 0.0], [0.0, 0.0, z], WALL, 2),
        s([0.0, y, 0.0], [x, 0.0, 0.0], [0.0, 0.0, z], WALL, 3),
        s([0.0, 0.0, 0.0], [0.0, y, 0.0], [0.0, 0.0, z], WALL, 4),
        s([x, 0.0, 0.0], [0.0, y, 0.0], [0.0, 0.0, z], WALL, 5),
    ];
    for (k, b) in boxes.iter().enumerate() {
        let o = 6 + k;
        let d = linalg::sub(b.max, b.min);
        let [x0, y0, _] = b.min;
        out.push(s([x0, y0, b.max[2]], [d[0], 0.0, 0.0], [0.0, d[1], 0.0], b.class, o));
        out.push(s([x0, y0, 0.0], [d[0], 0.0, 0.0], [0.0, 0.0, d[2]], b.class, o));
        out.push(s([x0, b.max[1], 0.0], [d[0], 0.0, 0.0], [0.0, 0.0, d[2]], b.class, o));
        out.push(s([x0, y0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]], b.class, o));
        out.push(s([b.max[0], y0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]], b.class, o));
    }
    out
}

/// Area each surface contributes after removing the floor under the boxes.
pub fn effective_areas(surfaces: &[Surface], boxes: &[SceneBox]) -> Vec<f64> {
    let covered: f64 = boxes.iter().map(|b| (b.max[0] - b.min[0]) * (b.max[1] - b.min[1])).sum();
    surfaces.iter().map(|s| if s.class == FLOOR { s.area() - covered } else { s.area() }).collect()
}

/// Scene layout without sampled points: boxes and surfaces, reproducible from the seed.
pub fn layout(cfg: &SceneConfig) -> Result<(Vec<SceneBox>, Vec<Surface>), SynthError> {
    cfg.validate()?;
    let boxes = place_boxes(cfg, &mut seed::rng(seed::derive(cfg.seed, &[1])))?;
    let surf = surfaces(cfg.room, &boxes);
    Ok((boxes, surf))
}

/// Surface index of every sampled point, in point order.
pub fn sample_points(cfg: &SceneConfig, surfaces: &[Surface], boxes: &[SceneBox]) -> (Vec<Vec3>, Vec<usize>) {
    let mut rng = seed::rng(seed::derive(cfg.seed, &[2]));
    let areas: Vec<f64> = surfaces.iter().map(Surface::area).collect();
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let mut positions = Vec::with_capacity(cfg.points);
    let mut which = Vec::with_capacity(cfg.points);
    while positions.len() < cfg.points {
        let r = rng.random::<f64>() * acc;
        let k = cdf.partition_point(|&c| c <= r).min(surfaces.len() - 1);
        let p = surfaces[k].at(rng.random(), rng.random());
        // Floor under a box is hidden; redraw from scratch to stay area-uniform.
        if surfaces[k].class == FLOOR && boxes.iter().any(|b| b.contains_xy(p)) {
            continue;
        }
        positions.push(p);
        which.push(k);
    }
    (positions, which)
}

fn place_camera(cfg: &SceneConfig, boxes: &[SceneBox], index: usize) -> Result<Pose, SynthError> {
    const WALL_MARGIN: f64 = 0.3;
    const BOX_MARGIN: f64 = 0.3;
    let mut rng = seed::rng(seed::derive(cfg.seed, &[3, index as u64]));
    let [x, y, z] = cfg.room;
    let centre = [x / 2.0, y / 2.0, z * 0.35];
    for _ in 0..CAMERA_TRIES {
        let eye = [
            WALL_MARGIN + (x - 2.0 * WALL_MARGIN).max(0.0) * rng.random::<f64>(),
            WALL_MARGIN + (y - 2.0 * WALL_MARGIN).max(0.0) * rng.random::<f64>(),
            1.0 + ((z - 0.3).min(1.8) - 1.0) * rng.random::<f64>(),
        ];
        let target = [
            centre[0] + 0.4 * (2.0 * rng.random::<f64>() - 1.0),
            centre[1] + 0.4 * (2.0 * rng.random::<f64>() - 1.0),
            centre[2] + 0.3 * (2.0 * rng.random::<f64>() - 1.0),
        ];
        let roll = 0.1 * (2.0 * rng.random::<f64>() - 1.0);
        if boxes.iter().any(|b| b.inflated_contains(eye, BOX_MARGIN)) || linalg::norm(linalg::sub(target, eye)) < 0.5 {
            continue;
        }
        let Ok(pose) = Pose::look_at(eye, target, [0.0, 0.0, 1.0]) else { continue };
        return Ok(Pose { rotation: linalg::rot_z(roll), translation: [0.0; 3] }.compose(&pose));
    }
    Err(SynthError::PlacementFailure { what: format!("camera {index}"), tries: CAMERA_TRIES })
}

/// Splats every point through the z-buffer; the winning point's colour is the pixel.
pub fn render(cloud: &PointCloud, pose: &Pose, intr: &CameraIntrinsics, camera_id: usize) -> (Image, CorrespondenceSet) {
    let mut corr = build_correspondences(cloud, pose, intr);
    corr.camera_id = camera_id;
    let mut img = Image::filled(intr.width as usize, intr.height as usize, BACKGROUND);
    for e in &corr.entries {
        img.set(e.pixel[0] as usize, e.pixel[1] as usize, cloud.color(e.point_index));
    }
    (img, corr)
}

pub fn generate_scene(cfg: &SceneConfig) -> Result<SyntheticScene, SynthError> {
    let (boxes, surf) = layout(cfg)?;
    let (positions, which) = sample_points(cfg, &surf, &boxes);

    let n_objects = surf.iter().map(|s| s.object).max().map_or(0, |m| m + 1);
    let mut obj_rng = seed::rng(seed::derive(cfg.seed, &[4]));
    let obj_offset: Vec<[f64; 3]> =
        (0..n_objects).map(|_| std::array::from_fn(|_| cfg.object_jitter * (2.0 * obj_rng.random::<f64>() - 1.0))).collect();
    let obj_phase: Vec<f64> = (0..n_objects).map(|_| std::f64::consts::TAU * obj_rng.random::<f64>()).collect();

    let mut rng = seed::rng(seed::derive(cfg.seed, &[5]));
    let noise = Normal::new(0.0, cfg.color_noise).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut pos32 = Vec::with_capacity(positions.len());
    let mut colors = Vec::with_capacity(positions.len());
    let mut labels = Vec::with_capacity(positions.len());
    for (p, &k) in positions.iter().zip(&which) {
        let s = &surf[k];
        let st = &cfg.styles[s.class as usize];
        let dir = linalg::normalize(st.stripe_dir);
        let stripe = st.stripe_amp * (std::f64::consts::TAU * st.stripe_freq * linalg::dot(*p, dir) + obj_phase[s.object]).sin();
        let c: [f32; 3] = std::array::from_fn(|ch| {
            (st.albedo[ch] + obj_offset[s.object][ch] + stripe + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32
        });
        pos32.push(p.map(|x| x as f32));
        colors.push(c);
        labels.push(s.class);
    }
    let cloud = PointCloud::new(pos32, colors, Some(labels)).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    let (w, h) = cfg.image_size;
    let intr = CameraIntrinsics::from_fov(w, h, cfg.fov_x).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let mut views = Vec::with_capacity(cfg.cameras);
    for c in 0..cfg.cameras {
        let pose = place_camera(cfg, &boxes, c)?;
        let (image, correspondences) = render(&cloud, &pose, &intr, c);
        views.push(SceneView { pose, intrinsics: intr, image, correspondences });
    }
    Ok(SyntheticScene { cloud, views })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_point;

    fn small(seed: u64) -> SceneConfig {
        SceneConfig { points: 1000, seed, ..Default::default() }
    }

    #[test]
    fn exact_point_count() {
        let s = generate_scene(&small(1)).unwrap();
        assert_eq!(s.cloud.len(), 1000);
        assert_eq!(s.views.len(), 2);
    }

    #[test]
    fn correspondences_reproject_and_colour_pixels() {
        let s = generate_scene(&SceneConfig { points: 5000, seed: 3, ..Default::default() }).unwrap();
        for v in &s.views {
            assert!(!v.correspondences.is_empty());
            for e in &v.correspondences.entries {
                let p = project_point(s.cloud.position(e.point_index), &v.pose, &v.intrinsics).unwrap();
                assert!((p.u - e.u).abs() < 1e-6 && (p.v - e.v).abs() < 1e-6);
                assert_eq!(v.image.get(e.pixel[0] as usize, e.pixel[1] as usize), s.cloud.color(e.point_index));
            }
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(generate_scene(&small(9)).unwrap(), generate_scene(&small(9)).unwrap());
        assert_ne!(generate_scene(&small(9)).unwrap().cloud.positions, generate_scene(&small(10)).unwrap().cloud.positions);
    }

    #[test]
    fn cameras_outside_boxes() {
        for seed in 0..20 {
            let cfg = small(seed);
            let (boxes, _) = layout(&cfg).unwrap();
            let s = generate_scene(&cfg).unwrap();
            for v in &s.views {
                let c = v.pose.center();
                assert!(boxes.iter().all(|b| !b.inflated_contains(c, 0.0)));
            }
        }
    }

    #[test]
    fn crowded_room_fails_placement() {
        let cfg = SceneConfig { room: [1.0, 1.0, 2.4], num_objects: 6, object_classes: vec![4], ..small(0) };
        assert!(matches!(generate_scene(&cfg), Err(SynthError::PlacementFailure { .. })));
    }
}
