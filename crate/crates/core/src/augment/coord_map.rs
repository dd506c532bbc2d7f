/// For every pixel of a transformed image, the continuous `(u, v)` it was sampled from
/// in the original image, or nothing if it has no source.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordMap {
    pub width: usize,
    pub height: usize,
    coords: Vec<[f64; 2]>,
    valid: Vec<bool>,
}

impl CoordMap {
    pub fn identity(width: usize, height: usize) -> Self {
        let mut coords = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                coords.push([x as f64, y as f64]);
            }
        }
        Self { width, height, coords, valid: vec![true; width * height] }
    }

    pub fn from_parts(width: usize, height: usize, coords: Vec<[f64; 2]>, valid: Vec<bool>) -> Self {
        assert_eq!(coords.len(), width * height);
        assert_eq!(valid.len(), width * height);
        Self { width, height, coords, valid }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<[f64; 2]> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.coords[i])
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.width, self.height)
    }

    /// Value of the map at continuous coordinates: bilinear for coordinates, nearest
    /// neighbour for validity.
    pub fn sample(&self, u: f64, v: f64) -> Option<[f64; 2]> {
        if !(u >= -0.5 && v >= -0.5 && u < self.width as f64 - 0.5 && v < self.height as f64 - 0.5) {
            return None;
        }
        let nx = ((u + 0.5).floor() as usize).min(self.width - 1);
        let ny = ((v + 0.5).floor() as usize).min(self.height - 1);
        if !self.valid[ny * self.width + nx] {
            return None;
        }
        let uc = u.clamp(0.0, (self.width - 1) as f64);
        let vc = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = uc.floor() as usize;
        let y0 = vc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = uc - x0 as f64;
        let fy = vc - y0 as f64;
        let at = |x: usize, y: usize| self.coords[y * self.width + x];
        let (a, b, c, d) = (at(x0, y0), at(x1, y0), at(x0, y1), at(x1, y1));
        let mut out = [0.0; 2];
        for k in 0..2 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        Some(out)
    }

    /// Map of a new `width`×`height` frame whose pixel `(x, y)` reads this frame at `source(x, y)`.
    pub fn pull_back(&self, width: usize, height: usize, source: impl Fn(usize, usize) -> [f64; 2]) -> CoordMap {
        let mut coords = Vec::with_capacity(width * height);
        let mut valid = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let [u, v] = source(x, y);
                match self.sample(u, v) {
                    Some(c) => {
                        coords.push(c);
                        valid.push(true);
                    }
                    None => {
                        coords.push([f64::NAN; 2]);
                        valid.push(false);
                    }
                }
            }
        }
        CoordMap { width, height, coords, valid }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sampling_is_exact_on_grid() {
        let m = CoordMap::identity(4, 3);
        assert_eq!(m.sample(2.0, 1.0), Some([2.0, 1.0]));
        assert_eq!(m.sample(2.25, 1.5), Some([2.25, 1.5]));
        assert_eq!(m.sample(-0.6, 1.0), None);
        assert_eq!(m.get(3, 2), Some([3.0, 2.0]));
    }

    #[test]
    fn pull_back_composes() {
        let m = CoordMap::identity(4, 4);
        let flipped = m.pull_back(4, 4, |x, y| [3.0 - x as f64, y as f64]);
        assert_eq!(flipped.get(0, 2), Some([3.0, 2.0]));
        let twice = flipped.pull_back(4, 4, |x, y| [3.0 - x as f64, y as f64]);
        assert!(twice.is_identity());
    }
}
