use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{AugmentError, CoordMap, Transform2D, TransformSpec2D};
use crate::geometry::Image;
use crate::seed;

/// Parameters actually drawn for one transform of a spec.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AppliedTransform {
    /// Window `[x0, x0 + width] × [y0, y0 + height]` of the incoming frame, mapped with
    /// corners aligned onto an `out_size` grid.
    Crop { x0: f64, y0: f64, width: f64, height: f64, out_size: (usize, usize) },
    Flip { applied: bool },
    ColorJitter { brightness: f64, contrast: f64, saturation: f64 },
    Grayscale { applied: bool },
}

/// Output pixel `(x, y)` of view A paired with output pixel `(x, y)` of view B.
pub type PixelPair = ([usize; 2], [usize; 2]);

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(c: [f64; 3]) -> f64 {
    LUMA[0] * c[0] + LUMA[1] * c[1] + LUMA[2] * c[2]
}

fn resample(base: &Image, rel: &CoordMap, background: [f64; 3]) -> Image {
    let mut out = Image::filled(rel.width, rel.height, background);
    for y in 0..rel.height {
        for x in 0..rel.width {
            if let Some([u, v]) = rel.get(x, y) {
                out.set(x, y, base.sample_bilinear(u, v));
            }
        }
    }
    out
}

fn map_pixels(img: &mut Image, f: impl Fn([f64; 3]) -> [f64; 3]) {
    for px in img.pixels.chunks_exact_mut(3) {
        let c = f([px[0], px[1], px[2]]);
        for k in 0..3 {
            px[k] = c[k].clamp(0.0, 1.0);
        }
    }
}

fn factor(rng: &mut impl Rng, spread: f64) -> f64 {
    1.0 - spread + 2.0 * spread * rng.random::<f64>()
}

pub fn augment_image(img: &Image, spec: &TransformSpec2D, seed: u64) -> Result<(Image, CoordMap), AugmentError> {
    augment_image_traced(img, spec, seed).map(|(i, m, _)| (i, m))
}

/// [`augment_image`] that also reports the drawn parameters of every transform.
///
/// Geometric transforms only update coordinate maps; pixels are resampled from the last
/// materialised image when a photometric transform needs them, or at the end. A purely
/// geometric spec therefore samples the original exactly once.
pub fn augment_image_traced(
    img: &Image,
    spec: &TransformSpec2D,
    seed: u64,
) -> Result<(Image, CoordMap, Vec<AppliedTransform>), AugmentError> {
    spec.validate()?;
    img.validate().map_err(|e| AugmentError::InvalidInput(e.to_string()))?;
    if img.width == 0 || img.height == 0 {
        return Err(AugmentError::InvalidInput("empty image".into()));
    }
    let mut rng = seed::rng(seed);
    let mut base = img.clone();
    let mut rel = CoordMap::identity(img.width, img.height);
    let mut full = rel.clone();
    let mut trace = Vec::with_capacity(spec.transforms.len());

    for t in &spec.transforms {
        let (w, h) = (rel.width, rel.height);
        match *t {
            Transform2D::RandomResizedCrop { scale: (lo, hi), out_size } => {
                let s = lo + (hi - lo) * rng.random::<f64>();
                let side = s.sqrt();
                let cw = side * (w as f64 - 1.0);
                let ch = side * (h as f64 - 1.0);
                if cw < 1.0 || ch < 1.0 {
                    return Err(AugmentError::DegenerateCrop(cw, ch));
                }
                let x0 = (w as f64 - 1.0 - cw) * rng.random::<f64>();
                let y0 = (h as f64 - 1.0 - ch) * rng.random::<f64>();
                let (ow, oh) = out_size;
                let step = |extent: f64, n: usize| if n > 1 { extent / (n as f64 - 1.0) } else { 0.0 };
                let (sx, sy) = (step(cw, ow), step(ch, oh));
                let (ox, oy) = (if ow > 1 { x0 } else { x0 + cw / 2.0 }, if oh > 1 { y0 } else { y0 + ch / 2.0 });
                let src = |x: usize, y: usize| [ox + x as f64 * sx, oy + y as f64 * sy];
                rel = rel.pull_back(ow, oh, src);
                full = full.pull_back(ow, oh, src);
                trace.push(AppliedTransform::Crop { x0, y0, width: cw, height: ch, out_size });
            }
            Transform2D::HorizontalFlip { p } => {
                let applied = rng.random::<f64>() < p;
                if applied {
                    let src = |x: usize, y: usize| [(w - 1 - x) as f64, y as f64];
                    rel = rel.pull_back(w, h, src);
                    full = full.pull_back(w, h, src);
                }
                trace.push(AppliedTransform::Flip { applied });
            }
            Transform2D::ColorJitter { brightness, contrast, saturation } => {
                let b = factor(&mut rng, brightness);
                let c = factor(&mut rng, contrast);
                let s = factor(&mut rng, saturation);
                let mut cur = resample(&base, &rel, [0.0; 3]);
                map_pixels(&mut cur, |px| px.map(|x| x * b));
                let n = (cur.width * cur.height) as f64;
                let mean = cur.pixels.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).sum::<f64>() / n;
                map_pixels(&mut cur, |px| px.map(|x| mean + c * (x - mean)));
                map_pixels(&mut cur, |px| {
                    let g = luma(px);
                    px.map(|x| g + s * (x - g))
                });
                rel = CoordMap::identity(cur.width, cur.height);
                base = cur;
                trace.push(AppliedTransform::ColorJitter { brightness: b, contrast: c, saturation: s });
            }
            Transform2D::Grayscale { p } => {
                let applied = rng.random::<f64>() < p;
                if applied {
                    let mut cur = resample(&base, &rel, [0.0; 3]);
                    map_pixels(&mut cur, |px| [luma(px); 3]);
                    rel = CoordMap::identity(cur.width, cur.height);
                    base = cur;
                }
                trace.push(AppliedTransform::Grayscale { applied });
            }
        }
    }

    let out = if rel.is_identity() { base } else { resample(&base, &rel, [0.0; 3]) };
    Ok((out, full, trace))
}

/// Samples up to `count` pixel pairs (one pixel of each view) whose source coordinates
/// lie within half a pixel of each other. Each pixel of A is paired with its nearest
/// match in B; no pixel of either view is used twice.
pub fn match_positive_pixels(
    map_a: &CoordMap,
    map_b: &CoordMap,
    count: usize,
    seed: u64,
) -> Result<Vec<PixelPair>, AugmentError> {
    const TOL: f64 = 0.5;
    let cell = |c: [f64; 2]| [(c[0] / TOL).floor() as i64, (c[1] / TOL).floor() as i64];
    let mut grid: HashMap<[i64; 2], Vec<usize>> = HashMap::new();
    for y in 0..map_b.height {
        for x in 0..map_b.width {
            if let Some(c) = map_b.get(x, y) {
                grid.entry(cell(c)).or_default().push(y * map_b.width + x);
            }
        }
    }

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for y in 0..map_a.height {
        for x in 0..map_a.width {
            let Some(ca) = map_a.get(x, y) else { continue };
            let [gx, gy] = cell(ca);
            let mut best: Option<(f64, usize)> = None;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let Some(bucket) = grid.get(&[gx + dx, gy + dy]) else { continue };
                    for &bi in bucket {
                        let cb = map_b.get(bi % map_b.width, bi / map_b.width).expect("only valid entries are indexed");
                        let d2 = (ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2);
                        if d2 < TOL * TOL && best.is_none_or(|(bd, bj)| d2 < bd || (d2 == bd && bi < bj)) {
                            best = Some((d2, bi));
                        }
                    }
                }
            }
            if let Some((_, bi)) = best {
                candidates.push((y * map_a.width + x, bi));
            }
        }
    }
    if candidates.is_empty() {
        return Err(AugmentError::EmptyOverlap);
    }

    candidates.shuffle(&mut seed::rng(seed));
    let mut used_b = vec![false; map_b.width * map_b.height];
    let mut out = Vec::with_capacity(count.min(candidates.len()));
    for (ai, bi) in candidates {
        if out.len() == count {
            break;
        }
        if !used_b[bi] {
            used_b[bi] = true;
            out.push(([ai % map_a.width, ai / map_a.width], [bi % map_b.width, bi / map_b.width]));
        }
    }
    Ok(out)
}
