use super::GeometryError;

/// Colored point cloud. Storage is single precision, arithmetic on it is done in `f64`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[f32; 3]>,
    pub labels: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, colors: Vec<[f32; 3]>, labels: Option<Vec<u32>>) -> Result<Self, GeometryError> {
        let cloud = Self { positions, colors, labels };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.positions.len();
        if self.colors.len() != n {
            return Err(GeometryError::InvalidCloud(format!("{} positions but {} colors", n, self.colors.len())));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(GeometryError::InvalidCloud(format!("{} positions but {} labels", n, labels.len())));
            }
        }
        if let Some(i) = self.positions.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(GeometryError::InvalidCloud(format!("non-finite position at {i}")));
        }
        if let Some(i) = self.colors.iter().position(|c| c.iter().any(|x| !(0.0..=1.0).contains(x))) {
            return Err(GeometryError::InvalidCloud(format!("color out of [0,1] at {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn position(&self, i: usize) -> [f64; 3] {
        let p = self.positions[i];
        [p[0] as f64, p[1] as f64, p[2] as f64]
    }

    #[inline]
    pub fn color(&self, i: usize) -> [f64; 3] {
        let c = self.colors[i];
        [c[0] as f64, c[1] as f64, c[2] as f64]
    }

    pub fn label(&self, i: usize) -> Option<u32> {
        self.labels.as_ref().map(|l| l[i])
    }

    /// New cloud holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }
}
