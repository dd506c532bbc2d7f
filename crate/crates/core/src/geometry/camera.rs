use super::linalg::{self, Mat3, Vec3};
use super::{GeometryError, MIN_DEPTH};

/// Pinhole intrinsics. Pixel centres are at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    /// Square pixels, principal point at the image centre, horizontal field of view `fov_x`.
    pub fn from_fov(width: u32, height: u32, fov_x: f64) -> Result<Self, GeometryError> {
        let f = width as f64 / (2.0 * (fov_x / 2.0).tan());
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |msg: &str| Err(GeometryError::InvalidIntrinsics(msg.to_string()));
        if !(self.fx > 0.0 && self.fx.is_finite() && self.fy > 0.0 && self.fy.is_finite()) {
            return bad("focal lengths must be positive and finite");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be nonzero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) || !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Rigid transform. For cameras it is camera-from-world: `q = R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub const ORTHO_TOL: f64 = 1e-9;

    pub fn identity() -> Self {
        Self { rotation: linalg::IDENTITY, translation: [0.0; 3] }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let pose = Self { rotation, translation };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let r = &self.rotation;
        if r.iter().flatten().chain(self.translation.iter()).any(|x| !x.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite entry".into()));
        }
        let rtr = linalg::mat_mul(&linalg::transpose(r), r);
        for (i, row) in rtr.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (x - expect).abs() > Self::ORTHO_TOL {
                    return Err(GeometryError::InvalidPose(format!("RᵀR[{i}][{j}] = {x}")));
                }
            }
        }
        let d = linalg::det(r);
        if (d - 1.0).abs() > Self::ORTHO_TOL {
            return Err(GeometryError::InvalidPose(format!("det(R) = {d}")));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self, GeometryError> {
        let forward = linalg::sub(target, eye);
        if linalg::norm(forward) < 1e-12 {
            return Err(GeometryError::InvalidPose("eye and target coincide".into()));
        }
        let z = linalg::normalize(forward);
        let right = linalg::cross(z, up);
        if linalg::norm(right) < 1e-12 {
            return Err(GeometryError::InvalidPose("view direction parallel to up".into()));
        }
        let x = linalg::normalize(right);
        let y = linalg::cross(z, x);
        let rotation = [x, y, z];
        let translation = linalg::scale(linalg::mat_vec(&rotation, eye), -1.0);
        Ok(Self { rotation, translation })
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        linalg::add(linalg::mat_vec(&self.rotation, p), self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rotation = linalg::transpose(&self.rotation);
        let translation = linalg::scale(linalg::mat_vec(&rotation, self.translation), -1.0);
        Self { rotation, translation }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rotation: linalg::mat_mul(&self.rotation, &other.rotation),
            translation: self.apply(other.translation),
        }
    }

    /// Camera centre in world coordinates.
    pub fn center(&self) -> Vec3 {
        linalg::scale(linalg::mat_t_vec(&self.rotation, self.translation), -1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutOfView {
    BehindCamera,
    OutsideFrame,
}

/// Continuous pixel coordinates plus camera-frame depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

pub fn project_point(p: Vec3, pose: &Pose, intr: &CameraIntrinsics) -> Result<Projection, OutOfView> {
    let q = pose.apply(p);
    // also rejects NaN depth
    if !(q[2] > MIN_DEPTH) {
        return Err(OutOfView::BehindCamera);
    }
    let u = intr.cx + intr.fx * q[0] / q[2];
    let v = intr.cy + intr.fy * q[1] / q[2];
    if !intr.contains(u, v) {
        return Err(OutOfView::OutsideFrame);
    }
    Ok(Projection { u, v, depth: q[2] })
}

pub fn unproject(u: f64, v: f64, depth: f64, pose: &Pose, intr: &CameraIntrinsics) -> Result<Vec3, GeometryError> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(GeometryError::DegenerateDepth(depth));
    }
    let q = [(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth];
    Ok(linalg::mat_t_vec(&pose.rotation, linalg::sub(q, pose.translation)))
}
