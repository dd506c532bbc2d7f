//! Linear-probe segmentation, confusion matrices and cross-modal retrieval.

use std::fmt::{self, Write as _};

use rand::seq::index;

use crate::geometry::CorrespondenceSet;
use crate::nn::EmbeddingSet;
use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid probe config: {0}")]
    InvalidConfig(String),
}

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_predictions(classes: usize, truth: &[u32], pred: &[u32]) -> Result<Self, EvalError> {
        if truth.len() != pred.len() {
            return Err(EvalError::Shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(pred) {
            if t as usize >= classes || p as usize >= classes {
                return Err(EvalError::Shape(format!("class {} outside 0..{classes}", t.max(p))));
            }
            m.add(t, p);
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: u32, pred: u32) {
        self.counts[truth as usize * self.classes + pred as usize] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn truth_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn pred_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class appears nowhere.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let denom = self.truth_count(c) + self.pred_count(c) - tp;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over the classes present in the ground truth.
    pub fn miou(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0;
        for c in 0..self.classes {
            if self.truth_count(c) == 0 {
                if self.pred_count(c) == 0 {
                    log::debug!("class {c} absent from truth and predictions; excluded from mIoU");
                }
                continue;
            }
            sum += self.iou(c).unwrap_or(0.0);
            n += 1;
        }
        if n == 0 { 0.0 } else { sum / n as f64 }
    }
}

/// `rows × dim` frozen features with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures {
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl LabeledFeatures {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<u32>) -> Result<Self, EvalError> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(EvalError::Shape(format!("{} values for {} rows of width {dim}", features.len(), labels.len())));
        }
        Ok(Self { dim, features, labels })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..][..self.dim]
    }

    /// Concatenates sets of equal width.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            dim: self.dim,
            features: idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(parts: &[LabeledFeatures]) -> Result<Self, EvalError> {
        let dim = parts.first().map_or(0, |p| p.dim);
        let mut out = Self { dim, features: Vec::new(), labels: Vec::new() };
        for p in parts {
            if p.dim != dim {
                return Err(EvalError::Shape(format!("feature width {} vs {dim}", p.dim)));
            }
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub label_fraction: f64,
    /// Full-batch gradient steps.
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { label_fraction: 1.0, epochs: 200, lr: 0.5, l2: 1e-4, seed: 0 }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidConfig(m.to_string()));
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad("label_fraction must lie in (0, 1]");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("probe lr must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("probe l2 must be non-negative");
        }
        Ok(())
    }
}

/// Softmax regression on standardized features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProbe {
    pub classes: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `classes × (dim + 1)`, bias last.
    pub weights: Vec<f64>,
}

impl LinearProbe {
    fn logits(&self, x: &[f64], z: &mut [f64], out: &mut [f64]) {
        for (k, zk) in z.iter_mut().enumerate() {
            *zk = (x[k] - self.mean[k]) / self.scale[k];
        }
        let w = self.dim + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * w..][..w];
            *o = row[self.dim] + row[..self.dim].iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Argmax class per row, ties to the lower class id.
    pub fn predict(&self, data: &LabeledFeatures) -> Vec<u32> {
        let mut z = vec![0.0; self.dim];
        let mut out = vec![0.0; self.classes];
        (0..data.rows())
            .map(|i| {
                self.logits(data.row(i), &mut z, &mut out);
                let mut best = 0;
                for c in 1..self.classes {
                    if out[c] > out[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect()
    }
}

/// Row indices kept as labeled: `max(1, round(fraction · n))` of them, sorted.
pub fn labeled_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let take = ((fraction * n as f64).round() as usize).clamp(1.min(n), n);
    let mut idx = index::sample(&mut seed::rng(seed), n, take).into_vec();
    idx.sort_unstable();
    idx
}

/// Fits the probe by full-batch gradient descent on mean cross-entropy plus `l2/2·‖W‖²`.
pub fn train_probe(data: &LabeledFeatures, classes: usize, cfg: &ProbeConfig) -> Result<LinearProbe, EvalError> {
    cfg.validate()?;
    let n = data.rows();
    if n == 0 {
        return Err(EvalError::EmptyInput("no labeled rows".into()));
    }
    if let Some(&l) = data.labels.iter().find(|&&l| l as usize >= classes) {
        return Err(EvalError::Shape(format!("label {l} outside 0..{classes}")));
    }
    let d = data.dim;
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.row(i)) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for i in 0..n {
        for ((s, x), m) in scale.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (x - m) * (x - m);
        }
    }
    scale.iter_mut().for_each(|s| *s = (*s / n as f64).sqrt().max(1e-8));

    let z: Vec<f64> = (0..n).flat_map(|i| data.row(i).iter().zip(&mean).zip(&scale).map(|((x, m), s)| (x - m) / s)).collect();
    let w = d + 1;
    let mut weights = vec![0.0; classes * w];
    let mut grad = vec![0.0; classes * w];
    let mut p = vec![0.0; classes];
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let zi = &z[i * d..][..d];
            for (c, pc) in p.iter_mut().enumerate() {
                let row = &weights[c * w..][..w];
                *pc = row[d] + row[..d].iter().zip(zi).map(|(a, b)| a * b).sum::<f64>();
            }
            let mx = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for pc in p.iter_mut() {
                *pc = (*pc - mx).exp();
                s += *pc;
            }
            let y = data.labels[i] as usize;
            for (c, &pc) in p.iter().enumerate() {
                let r = pc / s - if c == y { 1.0 } else { 0.0 };
                let g = &mut grad[c * w..][..w];
                for (gk, zk) in g[..d].iter_mut().zip(zi) {
                    *gk += r * zk;
                }
                g[d] += r;
            }
        }
        for (k, (wk, gk)) in weights.iter_mut().zip(&grad).enumerate() {
            let decay = if k % w == d { 0.0 } else { cfg.l2 * *wk };
            *wk -= cfg.lr * (gk / n as f64 + decay);
        }
    }
    Ok(LinearProbe { classes, dim: d, mean, scale, weights })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub confusion: ConfusionMatrix,
    pub miou: f64,
}

/// Trains on the `label_fraction` subset of `train` and scores on `test`.
pub fn linear_probe(train: &LabeledFeatures, test: &LabeledFeatures, cfg: &ProbeConfig) -> Result<ProbeResult, EvalError> {
    cfg.validate()?;
    if train.dim != test.dim {
        return Err(EvalError::Shape(format!("train width {} vs test width {}", train.dim, test.dim)));
    }
    if test.rows() == 0 {
        return Err(EvalError::EmptyInput("no test rows".into()));
    }
    let classes = train.labels.iter().chain(&test.labels).max().map_or(0, |&m| m as usize + 1);
    let subset = train.select(&labeled_subset(train.rows(), cfg.label_fraction, cfg.seed));
    let probe = train_probe(&subset, classes, cfg)?;
    let confusion = ConfusionMatrix::from_predictions(classes, &test.labels, &probe.predict(test))?;
    Ok(ProbeResult { miou: confusion.miou(), confusion })
}

fn matched_rows(
    point_emb: &EmbeddingSet,
    pixel_emb: &EmbeddingSet,
    gt: &CorrespondenceSet,
    width: usize,
) -> Result<Vec<(usize, usize)>, EvalError> {
    if gt.is_empty() {
        return Err(EvalError::EmptyInput("no ground-truth correspondences".into()));
    }
    if point_emb.dim != pixel_emb.dim {
        return Err(EvalError::Shape(format!("point width {} vs pixel width {}", point_emb.dim, pixel_emb.dim)));
    }
    gt.entries
        .iter()
        .map(|e| {
            let px = e.pixel[1] as usize * width + e.pixel[0] as usize;
            if e.point_index >= point_emb.rows || px >= pixel_emb.rows || e.pixel[0] as usize >= width {
                Err(EvalError::Shape(format!("correspondence ({}, {:?}) outside the embeddings", e.point_index, e.pixel)))
            } else {
                Ok((e.point_index, px))
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top-1 point→pixel retrieval among the pixels of `gt`. Point embeddings are indexed
/// by cloud index, pixel embeddings by `y · width + x`. Ties go to the earliest entry.
pub fn retrieval_accuracy(
    point_emb: &EmbeddingSet,
    pixel_emb: &EmbeddingSet,
    gt: &CorrespondenceSet,
    width: usize,
) -> Result<f64, EvalError> {
    let pairs = matched_rows(point_emb, pixel_emb, gt, width)?;
    let hits = pairs
        .iter()
        .enumerate()
        .filter(|&(a, &(pt, _))| {
            let q = point_emb.row(pt);
            let mut best = (f64::NEG_INFINITY, 0);
            for (b, &(_, px)) in pairs.iter().enumerate() {
                let s = dot(q, pixel_emb.row(px));
                if s > best.0 {
                    best = (s, b);
                }
            }
            best.1 == a
        })
        .count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Mean `z_point · z_pixel` over the correspondences.
pub fn matched_cosine(point_emb: &EmbeddingSet, pixel_emb: &EmbeddingSet, gt: &CorrespondenceSet, width: usize) -> Result<f64, EvalError> {
    let pairs = matched_rows(point_emb, pixel_emb, gt, width)?;
    Ok(pairs.iter().map(|&(pt, px)| dot(point_emb.row(pt), pixel_emb.row(px))).sum::<f64>() / pairs.len() as f64)
}

/// `count` correspondences drawn without replacement, in their original order.
pub fn sample_correspondences(gt: &CorrespondenceSet, count: usize, seed: u64) -> CorrespondenceSet {
    let take = count.min(gt.len());
    let mut idx = index::sample(&mut seed::rng(seed), gt.len(), take).into_vec();
    idx.sort_unstable();
    CorrespondenceSet { camera_id: gt.camera_id, entries: idx.into_iter().map(|i| gt.entries[i]).collect() }
}

/// Settings of the label-efficiency benchmark: every fraction is probed with
/// pretrained and randomly initialised features under `seeds` seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSettings {
    pub fractions: Vec<f64>,
    pub seeds: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    /// Labeled pool drawn from the training points before the fraction is applied
    /// (0 keeps every point).
    pub pool: usize,
    /// Trailing scenes of a data directory held out for testing.
    pub test_scenes: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { fractions: vec![0.1, 0.2, 0.5, 1.0], seeds: 5, epochs: 200, lr: 0.5, l2: 1e-4, pool: 2000, test_scenes: 2 }
    }
}

impl ProbeSettings {
    pub fn probe_config(&self, label_fraction: f64, seed: u64) -> ProbeConfig {
        ProbeConfig { label_fraction, epochs: self.epochs, lr: self.lr, l2: self.l2, seed }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.fractions.is_empty() || self.seeds == 0 {
            return Err(EvalError::InvalidConfig("need at least one fraction and one seed".into()));
        }
        for &f in &self.fractions {
            self.probe_config(f, 0).validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Pretrained,
    Random,
}

impl fmt::Display for InitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitKind::Pretrained => "pretrained",
            InitKind::Random => "random",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeRecord {
    pub label_fraction: f64,
    pub init: InitKind,
    pub seed: u64,
    pub miou: f64,
}

pub const PROBE_CSV_HEADER: &str = "label_fraction,init_kind,seed,miou";

pub fn probe_csv(records: &[ProbeRecord]) -> String {
    let mut s = format!("{PROBE_CSV_HEADER}\n");
    for r in records {
        writeln!(s, "{},{},{},{:.6}", r.label_fraction, r.init, r.seed, r.miou).expect("write to String");
    }
    s
}

/// Median of the records matching `fraction` and `init` (mean of the middle two for an
/// even count), or `None` if there are none.
pub fn median_miou(records: &[ProbeRecord], fraction: f64, init: InitKind) -> Option<f64> {
    let mut v: Vec<f64> = records.iter().filter(|r| r.label_fraction == fraction && r.init == init).map(|r| r.miou).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Correspondence;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2, 1];
        let m = ConfusionMatrix::from_predictions(3, &t, &t).unwrap();
        assert_eq!(m.miou(), 1.0);
        assert_eq!(m.total(), 5);
    }

    #[test]
    fn all_predicted_one_class() {
        let t = [0, 0, 1, 1];
        let m = ConfusionMatrix::from_predictions(2, &t, &[0; 4]).unwrap();
        assert_eq!(m.iou(0), Some(0.5));
        assert_eq!(m.iou(1), Some(0.0));
        assert_eq!(m.miou(), 0.25);
    }

    #[test]
    fn absent_class_excluded() {
        let m = ConfusionMatrix::from_predictions(4, &[0, 1], &[0, 1]).unwrap();
        assert_eq!(m.iou(3), None);
        assert_eq!(m.miou(), 1.0);
    }

    fn corr(pairs: &[(usize, u32)]) -> CorrespondenceSet {
        CorrespondenceSet {
            camera_id: 0,
            entries: pairs
                .iter()
                .map(|&(p, x)| Correspondence { point_index: p, u: x as f64, v: 0.0, depth: 1.0, pixel: [x, 0] })
                .collect(),
        }
    }

    #[test]
    fn retrieval_identity_and_swap() {
        let e = EmbeddingSet::new(2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(retrieval_accuracy(&e, &e, &corr(&[(0, 0), (1, 1)]), 2).unwrap(), 1.0);
        assert_eq!(retrieval_accuracy(&e, &e, &corr(&[(0, 1), (1, 0)]), 2).unwrap(), 0.0);
        assert!(matches!(retrieval_accuracy(&e, &e, &corr(&[]), 2), Err(EvalError::EmptyInput(_))));
    }

    #[test]
    fn retrieval_ties_go_to_first() {
        let p = EmbeddingSet::new(2, vec![1.0, 0.0, 1.0, 0.0]);
        let gt = corr(&[(0, 0), (1, 1)]);
        assert_eq!(retrieval_accuracy(&p, &p, &gt, 2).unwrap(), 0.5);
    }

    #[test]
    fn probe_separable() {
        let mut f = Vec::new();
        let mut l = Vec::new();
        for i in 0..40 {
            let c = (i % 2) as u32;
            f.extend([c as f64 * 3.0 + (i as f64 * 0.01), 1.0]);
            l.push(c);
        }
        let data = LabeledFeatures::new(2, f, l).unwrap();
        let r = linear_probe(&data, &data, &ProbeConfig::default()).unwrap();
        assert_eq!(r.miou, 1.0);
    }

    #[test]
    fn subset_size() {
        assert_eq!(labeled_subset(100, 0.1, 3).len(), 10);
        assert_eq!(labeled_subset(5, 0.01, 3).len(), 1);
        assert_eq!(labeled_subset(7, 1.0, 3), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn median() {
        let r = |m| ProbeRecord { label_fraction: 0.1, init: InitKind::Random, seed: 0, miou: m };
        assert_eq!(median_miou(&[r(0.3), r(0.1), r(0.2)], 0.1, InitKind::Random), Some(0.2));
        assert_eq!(median_miou(&[r(0.3)], 1.0, InitKind::Random), None);
    }
}
