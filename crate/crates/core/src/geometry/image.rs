use super::GeometryError;

/// Row-major RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, GeometryError> {
        let img = Self { width, height, pixels };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&color);
        }
        Self { width, height, pixels }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.pixels.len() != self.width * self.height * 3 {
            return Err(GeometryError::InvalidImage(format!(
                "{}x{} image needs {} values, got {}",
                self.width,
                self.height,
                self.width * self.height * 3,
                self.pixels.len()
            )));
        }
        if let Some(i) = self.pixels.iter().position(|x| !(0.0..=1.0).contains(x)) {
            return Err(GeometryError::InvalidImage(format!("value {} out of range at {i}", self.pixels[i])));
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        self.pixels[o..o + 3].copy_from_slice(&c);
    }

    /// Bilinear sample at continuous pixel coordinates, clamped to the border.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let u = u.clamp(0.0, (self.width - 1) as f64);
        let v = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        out
    }

    /// Snap every channel to the nearest multiple of 1/255 (the 8-bit file encoding).
    pub fn quantized(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&x| quantize_channel(x) as f64 / 255.0).collect(),
        }
    }
}

#[inline]
pub(crate) fn quantize_channel(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}
