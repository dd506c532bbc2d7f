//! Feature visualisation: 1D t-SNE (or PCA) and a blue→red heatmap composited at pixel
//! or projected point positions.

use std::collections::HashMap;

use rand::seq::index;
use rand_distr::{Distribution, Normal};

use crate::geometry::Image;
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VizError {
    #[error("all feature rows are identical")]
    DegenerateInput,
    #[error("invalid t-SNE config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("value {value} at {index} is outside [0, 1] or the canvas")]
    OutOfRange { index: usize, value: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Rows embedded exactly; the rest copy their nearest embedded neighbour.
    pub subsample_cap: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self { perplexity: 30.0, iterations: 500, learning_rate: 10.0, subsample_cap: 2048, seed: 0 }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<(), VizError> {
        let bad = |m: &str| Err(VizError::InvalidConfig(m.to_string()));
        if !(self.perplexity >= 1.0 && self.perplexity.is_finite()) {
            return bad("perplexity must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.subsample_cap < 2 {
            return bad("subsample cap must be at least 2");
        }
        Ok(())
    }
}

const EXAGGERATION: f64 = 12.0;
const SWITCH_ITER: usize = 250;
const PERPLEXITY_TOL: f64 = 1e-5;
const PERPLEXITY_STEPS: usize = 50;

fn check_rows(features: &[f64], dim: usize) -> Result<usize, VizError> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(VizError::Shape(format!("{} values for width {dim}", features.len())));
    }
    let n = features.len() / dim;
    if n < 2 {
        return Err(VizError::Shape(format!("need at least 2 rows, got {n}")));
    }
    if let Some(i) = features.iter().position(|x| !x.is_finite()) {
        return Err(VizError::OutOfRange { index: i / dim, value: features[i] });
    }
    Ok(n)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Groups bit-identical rows. Returns the representative row of each group (in first
/// occurrence order) and the group of every input row.
fn dedupe(features: &[f64], dim: usize) -> (Vec<usize>, Vec<usize>) {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let group = features
        .chunks(dim)
        .enumerate()
        .map(|(i, row)| {
            let key: Vec<u64> = row.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect();
            *seen.entry(key).or_insert_with(|| {
                reps.push(i);
                reps.len() - 1
            })
        })
        .collect();
    (reps, group)
}

fn rescale(y: &mut [f64]) {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in y.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
    }
}

/// Conditional affinities of one row, with the precision tuned so the entropy matches
/// `ln(perplexity)`.
fn row_affinities(d: &[f64], i: usize, target: f64, out: &mut [f64]) {
    let (mut beta, mut lo, mut hi) = (1.0, f64::NEG_INFINITY, f64::INFINITY);
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    for _ in 0..PERPLEXITY_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (o, &dj)) in out.iter_mut().zip(d).enumerate() {
            *o = if j == i { 0.0 } else { (-(dj - dmin) * beta).exp() };
            sum += *o;
            weighted += *o * (dj - dmin);
        }
        let entropy = sum.ln() + beta * weighted / sum;
        let diff = entropy - target;
        if diff.abs() < PERPLEXITY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { 0.5 * (beta + lo) } else { beta / 2.0 };
        }
    }
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Exact t-SNE of `rows` (distinct) into one dimension.
fn tsne_exact(rows: &[&[f64]], cfg: &TsneConfig) -> Vec<f64> {
    let n = rows.len();
    if n == 2 {
        return vec![0.0, 1.0];
    }
    let perplexity = cfg.perplexity.min((n - 1) as f64 / 3.0).max(1.0);
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        for (j, dj) in d.iter_mut().enumerate() {
            *dj = sq_dist(rows[i], rows[j]);
        }
        row_affinities(&d, i, target, &mut p[i * n..][..n]);
    }
    for i in 0..n {
        for j in i + 1..n {
            let s = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            p[i * n + j] = s;
            p[j * n + i] = s;
        }
    }

    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut rng = seed::rng(seed::derive(cfg.seed, &[0x75]));
    let mut y: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; n];
    let mut gains = vec![1.0f64; n];
    let mut q = vec![0.0; n * n];
    let mut grad = vec![0.0; n];
    for it in 0..cfg.iterations {
        let (exag, momentum) = if it < SWITCH_ITER { (EXAGGERATION, 0.5) } else { (1.0, 0.8) };
        let mut qsum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let t = 1.0 / (1.0 + (y[i] - y[j]) * (y[i] - y[j]));
                q[i * n + j] = t;
                q[j * n + i] = t;
                qsum += 2.0 * t;
            }
        }
        for i in 0..n {
            let mut g = 0.0;
            for j in 0..n {
                if j != i {
                    let t = q[i * n + j];
                    g += (exag * p[i * n + j] - t / qsum) * t * (y[i] - y[j]);
                }
            }
            grad[i] = 4.0 * g;
        }
        for i in 0..n {
            gains[i] = if (grad[i] > 0.0) != (update[i] > 0.0) { gains[i] + 0.2 } else { (gains[i] * 0.8).max(0.01) };
            update[i] = momentum * update[i] - cfg.learning_rate * gains[i] * grad[i];
            y[i] += update[i];
        }
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter_mut().for_each(|v| *v -= mean);
    }
    y
}

/// One value per row in `[0, 1]` (min-max rescaled). Identical rows get identical values.
pub fn tsne_1d(features: &[f64], dim: usize, cfg: &TsneConfig) -> Result<Vec<f64>, VizError> {
    cfg.validate()?;
    check_rows(features, dim)?;
    let row = |i: usize| &features[i * dim..][..dim];
    let (reps, group) = dedupe(features, dim);
    if reps.len() < 2 {
        return Err(VizError::DegenerateInput);
    }
    let chosen: Vec<usize> = if reps.len() > cfg.subsample_cap {
        let mut s = index::sample(&mut seed::rng(seed::derive(cfg.seed, &[0x55])), reps.len(), cfg.subsample_cap).into_vec();
        s.sort_unstable();
        s
    } else {
        (0..reps.len()).collect()
    };
    let rows: Vec<&[f64]> = chosen.iter().map(|&g| row(reps[g])).collect();
    let mut y_chosen = tsne_exact(&rows, cfg);
    rescale(&mut y_chosen);

    let mut y_group = vec![f64::NAN; reps.len()];
    for (&g, &v) in chosen.iter().zip(&y_chosen) {
        y_group[g] = v;
    }
    for g in 0..reps.len() {
        if y_group[g].is_nan() {
            let r = row(reps[g]);
            let mut best = (f64::INFINITY, 0);
            for (c, cr) in rows.iter().enumerate() {
                let dd = sq_dist(r, cr);
                if dd < best.0 {
                    best = (dd, c);
                }
            }
            y_group[g] = y_chosen[best.1];
        }
    }
    Ok(group.into_iter().map(|g| y_group[g]).collect())
}

/// Projection onto the first principal component, min-max rescaled. The sign is fixed so
/// that the component's largest-magnitude entry is positive.
pub fn pca_1d(features: &[f64], dim: usize) -> Result<Vec<f64>, VizError> {
    let n = check_rows(features, dim)?;
    let mut mean = vec![0.0; dim];
    for r in features.chunks(dim) {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / n as f64;
        }
    }
    let mut cov = vec![0.0; dim * dim];
    for r in features.chunks(dim) {
        for a in 0..dim {
            for b in 0..dim {
                cov[a * dim + b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    if cov.iter().step_by(dim + 1).all(|&v| v == 0.0) {
        return Err(VizError::DegenerateInput);
    }
    let mut v: Vec<f64> = (0..dim).map(|k| 1.0 + k as f64 * 1e-3).collect();
    for _ in 0..500 {
        let mut w = vec![0.0; dim];
        for a in 0..dim {
            w[a] = (0..dim).map(|b| cov[a * dim + b] * v[b]).sum();
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        w.iter_mut().for_each(|x| *x /= norm);
        let done = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-12;
        v = w;
        if done {
            break;
        }
    }
    let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if big < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let mut y: Vec<f64> = features.chunks(dim).map(|r| r.iter().zip(&mean).zip(&v).map(|((x, m), c)| (x - m) * c).sum()).collect();
    rescale(&mut y);
    Ok(y)
}

/// `v ↦ (round(255v), 0, round(255(1 − v)))` in 8-bit units, rounding half up.
pub fn heat_color(v: f64) -> [u8; 3] {
    let q = |x: f64| (255.0 * x + 0.5).floor().clamp(0.0, 255.0) as u8;
    [q(v), 0, q(1.0 - v)]
}

/// Paints `values[i]` at `coords[i] = [x, y]` on a black canvas; later entries overwrite
/// earlier ones.
pub fn heatmap_composite(values: &[f64], coords: &[[usize; 2]], width: usize, height: usize) -> Result<Image, VizError> {
    if values.len() != coords.len() {
        return Err(VizError::Shape(format!("{} values for {} coordinates", values.len(), coords.len())));
    }
    let mut img = Image::filled(width, height, [0.0; 3]);
    for (i, (&v, &[x, y])) in values.iter().zip(coords).enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(VizError::OutOfRange { index: i, value: v });
        }
        if x >= width || y >= height {
            return Err(VizError::OutOfRange { index: i, value: (y * width + x) as f64 });
        }
        img.set(x, y, heat_color(v).map(|c| c as f64 / 255.0));
    }
    Ok(img)
}
