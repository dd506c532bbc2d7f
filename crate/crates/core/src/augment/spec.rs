use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use super::AugmentError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform2D {
    /// Crop a window covering a fraction of the image area drawn from `scale`, then
    /// resize it to `out_size` (width, height) with bilinear resampling.
    RandomResizedCrop { scale: (f64, f64), out_size: (usize, usize) },
    HorizontalFlip { p: f64 },
    /// Factors drawn from `[1 - x, 1 + x]` for each of the three adjustments.
    ColorJitter { brightness: f64, contrast: f64, saturation: f64 },
    Grayscale { p: f64 },
}

impl Transform2D {
    pub fn is_geometric(&self) -> bool {
        matches!(self, Self::RandomResizedCrop { .. } | Self::HorizontalFlip { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformSpec2D {
    pub transforms: Vec<Transform2D>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform3D {
    /// Rotation about the +z (gravity) axis by an angle drawn from `angle_range`.
    RotationZ { angle_range: (f64, f64) },
    PointDropout { keep_prob: f64 },
    ColorJitter3D { brightness: f64, contrast: f64 },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransformSpec3D {
    pub transforms: Vec<Transform3D>,
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, AugmentError> {
    Err(AugmentError::InvalidSpec(msg.into()))
}

fn check_prob(name: &str, p: f64) -> Result<(), AugmentError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        invalid(format!("{name} probability {p} outside [0, 1]"))
    }
}

fn check_jitter(name: &str, x: f64) -> Result<(), AugmentError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        invalid(format!("{name} jitter {x} outside [0, 1]"))
    }
}

impl TransformSpec2D {
    pub fn new(transforms: Vec<Transform2D>) -> Result<Self, AugmentError> {
        let spec = Self { transforms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for t in &self.transforms {
            match *t {
                Transform2D::RandomResizedCrop { scale: (lo, hi), out_size: (w, h) } => {
                    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                        return invalid(format!("crop scale range ({lo}, {hi}) not inside (0, 1]"));
                    }
                    if w == 0 || h == 0 {
                        return invalid("crop output size must be positive");
                    }
                }
                Transform2D::HorizontalFlip { p } | Transform2D::Grayscale { p } => check_prob("transform", p)?,
                Transform2D::ColorJitter { brightness, contrast, saturation } => {
                    check_jitter("brightness", brightness)?;
                    check_jitter("contrast", contrast)?;
                    check_jitter("saturation", saturation)?;
                }
            }
        }
        Ok(())
    }

    /// Output size for an input of the given size.
    pub fn output_size(&self, width: usize, height: usize) -> (usize, usize) {
        self.transforms.iter().fold((width, height), |size, t| match *t {
            Transform2D::RandomResizedCrop { out_size, .. } => out_size,
            _ => size,
        })
    }
}

impl TransformSpec3D {
    pub fn new(transforms: Vec<Transform3D>) -> Result<Self, AugmentError> {
        let spec = Self { transforms };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for t in &self.transforms {
            match *t {
                Transform3D::RotationZ { angle_range: (lo, hi) } => {
                    if !(lo >= 0.0 && lo <= hi && hi < TAU) {
                        return invalid(format!("angle range ({lo}, {hi}) not inside [0, 2π)"));
                    }
                }
                Transform3D::PointDropout { keep_prob } => {
                    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                        return invalid(format!("keep probability {keep_prob} outside (0, 1]"));
                    }
                }
                Transform3D::ColorJitter3D { brightness, contrast } => {
                    check_jitter("brightness", brightness)?;
                    check_jitter("contrast", contrast)?;
                }
            }
        }
        Ok(())
    }
}

// Text form used by the run config: items separated by `;`, fields by `:`, e.g.
// `crop:0.35:1:64x64;flip:0.5;jitter:0.4:0.4:0.4;gray:0.2`. `none` is the empty spec.

impl fmt::Display for TransformSpec2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.transforms.is_empty() {
            return f.write_str("none");
        }
        let items: Vec<String> = self
            .transforms
            .iter()
            .map(|t| match *t {
                Transform2D::RandomResizedCrop { scale: (lo, hi), out_size: (w, h) } => {
                    format!("crop:{lo}:{hi}:{w}x{h}")
                }
                Transform2D::HorizontalFlip { p } => format!("flip:{p}"),
                Transform2D::ColorJitter { brightness, contrast, saturation } => {
                    format!("jitter:{brightness}:{contrast}:{saturation}")
                }
                Transform2D::Grayscale { p } => format!("gray:{p}"),
            })
            .collect();
        f.write_str(&items.join(";"))
    }
}

impl fmt::Display for TransformSpec3D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.transforms.is_empty() {
            return f.write_str("none");
        }
        let items: Vec<String> = self
            .transforms
            .iter()
            .map(|t| match *t {
                Transform3D::RotationZ { angle_range: (lo, hi) } => format!("rotz:{lo}:{hi}"),
                Transform3D::PointDropout { keep_prob } => format!("dropout:{keep_prob}"),
                Transform3D::ColorJitter3D { brightness, contrast } => format!("cjitter:{brightness}:{contrast}"),
            })
            .collect();
        f.write_str(&items.join(";"))
    }
}

fn fields(item: &str) -> (&str, Vec<&str>) {
    let mut parts = item.trim().split(':');
    let name = parts.next().unwrap_or("");
    (name, parts.collect())
}

fn nums<const N: usize>(item: &str, args: &[&str]) -> Result<[f64; N], AugmentError> {
    if args.len() != N {
        return invalid(format!("`{item}` expects {N} numeric fields"));
    }
    let mut out = [0.0; N];
    for (o, a) in out.iter_mut().zip(args) {
        *o = a.trim().parse().map_err(|_| AugmentError::InvalidSpec(format!("bad number `{a}` in `{item}`")))?;
    }
    Ok(out)
}

impl FromStr for TransformSpec2D {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::default());
        }
        let mut transforms = Vec::new();
        for item in s.split(';') {
            let (name, args) = fields(item);
            let t = match name {
                "crop" => {
                    if args.len() != 3 {
                        return invalid(format!("`{item}` expects crop:lo:hi:WxH"));
                    }
                    let [lo, hi] = nums::<2>(item, &args[..2])?;
                    let (w, h) = args[2]
                        .split_once('x')
                        .and_then(|(w, h)| Some((w.trim().parse().ok()?, h.trim().parse().ok()?)))
                        .ok_or_else(|| AugmentError::InvalidSpec(format!("bad size in `{item}`")))?;
                    Transform2D::RandomResizedCrop { scale: (lo, hi), out_size: (w, h) }
                }
                "flip" => Transform2D::HorizontalFlip { p: nums::<1>(item, &args)?[0] },
                "jitter" => {
                    let [brightness, contrast, saturation] = nums::<3>(item, &args)?;
                    Transform2D::ColorJitter { brightness, contrast, saturation }
                }
                "gray" => Transform2D::Grayscale { p: nums::<1>(item, &args)?[0] },
                other => return invalid(format!("unknown image transform `{other}`")),
            };
            transforms.push(t);
        }
        Self::new(transforms)
    }
}

impl FromStr for TransformSpec3D {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(Self::default());
        }
        let mut transforms = Vec::new();
        for item in s.split(';') {
            let (name, args) = fields(item);
            let t = match name {
                "rotz" => {
                    let [lo, hi] = nums::<2>(item, &args)?;
                    Transform3D::RotationZ { angle_range: (lo, hi) }
                }
                "dropout" => Transform3D::PointDropout { keep_prob: nums::<1>(item, &args)?[0] },
                "cjitter" => {
                    let [brightness, contrast] = nums::<2>(item, &args)?;
                    Transform3D::ColorJitter3D { brightness, contrast }
                }
                other => return invalid(format!("unknown cloud transform `{other}`")),
            };
            transforms.push(t);
        }
        Self::new(transforms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let s: TransformSpec2D = "crop:0.35:1:48x40;flip:0.5;jitter:0.4:0.3:0.2;gray:0.2".parse().unwrap();
        assert_eq!(s.transforms.len(), 4);
        assert_eq!(s.to_string().parse::<TransformSpec2D>().unwrap(), s);
        assert_eq!(s.output_size(64, 64), (48, 40));
        let c: TransformSpec3D = "rotz:0:6.2;dropout:0.9;cjitter:0.1:0.1".parse().unwrap();
        assert_eq!(c.to_string().parse::<TransformSpec3D>().unwrap(), c);
        assert_eq!("none".parse::<TransformSpec2D>().unwrap(), TransformSpec2D::default());
    }

    #[test]
    fn rejects_out_of_range() {
        assert!("flip:1.5".parse::<TransformSpec2D>().is_err());
        assert!("crop:0:1:8x8".parse::<TransformSpec2D>().is_err());
        assert!("crop:0.5:1:0x8".parse::<TransformSpec2D>().is_err());
        assert!("blur:3".parse::<TransformSpec2D>().is_err());
        assert!("dropout:0".parse::<TransformSpec3D>().is_err());
        assert!("rotz:0:7".parse::<TransformSpec3D>().is_err());
    }
}
