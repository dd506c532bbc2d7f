use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use xmodal_core::eval::{retrieval_accuracy, ConfusionMatrix};
use xmodal_core::geometry::{Correspondence, CorrespondenceSet};
use xmodal_core::nn::EmbeddingSet;
use xmodal_core::seed;
use xmodal_core::viz::{heat_color, heatmap_composite, tsne_1d, TsneConfig};

fn gaussian_unit(rows: usize, dim: usize, s: u64) -> EmbeddingSet {
    let mut rng = seed::rng(s);
    let mut e = EmbeddingSet::empty(dim);
    for _ in 0..rows {
        let r: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.push(&r.iter().map(|v| v / n).collect::<Vec<_>>());
    }
    e
}

/// Point `i` sits at pixel `(i % width, i / width)`.
fn diagonal(n: usize, width: usize) -> CorrespondenceSet {
    let entries = (0..n)
        .map(|i| Correspondence { point_index: i, u: 0.0, v: 0.0, depth: 1.0, pixel: [(i % width) as u32, (i / width) as u32] })
        .collect();
    CorrespondenceSet { camera_id: 0, entries }
}

/// Householder reflection `I − 2vvᵀ` applied to every row.
fn reflect(e: &EmbeddingSet, v: &[f64]) -> EmbeddingSet {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let v: Vec<f64> = v.iter().map(|x| x / n).collect();
    let mut out = e.clone();
    for r in out.data.chunks_mut(e.dim) {
        let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(&v).for_each(|(a, b)| *a -= 2.0 * d * b);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn miou_ignores_class_renaming(s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let truth: Vec<u32> = (0..300).map(|_| rng.random_range(0..5)).collect();
        let pred: Vec<u32> = truth.iter().map(|&t| if rng.random::<f64>() < 0.6 { t } else { rng.random_range(0..5) }).collect();
        let mut perm: Vec<u32> = (0..5).collect();
        perm.shuffle(&mut rng);
        let a = ConfusionMatrix::from_predictions(5, &truth, &pred).unwrap().miou();
        let rt: Vec<u32> = truth.iter().map(|&t| perm[t as usize]).collect();
        let rp: Vec<u32> = pred.iter().map(|&p| perm[p as usize]).collect();
        let b = ConfusionMatrix::from_predictions(5, &rt, &rp).unwrap().miou();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn retrieval_ignores_shared_rotations(s in any::<u64>()) {
        let pts = gaussian_unit(60, 6, s);
        let noisy: Vec<f64> = pts.data.iter().zip(&gaussian_unit(60, 6, s ^ 1).data).map(|(a, b)| a + 0.6 * b).collect();
        let mut pix = EmbeddingSet::new(6, noisy);
        let norms: Vec<f64> = (0..60).map(|i| pix.norm(i)).collect();
        pix.data.chunks_mut(6).zip(norms).for_each(|(r, n)| r.iter_mut().for_each(|v| *v /= n));
        let gt = diagonal(60, 8);
        let v: Vec<f64> = gaussian_unit(1, 6, s ^ 2).data;
        let a = retrieval_accuracy(&pts, &pix, &gt, 8).unwrap();
        let b = retrieval_accuracy(&reflect(&pts, &v), &reflect(&pix, &v), &gt, 8).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn heat_color_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (cl, ch) = (heat_color(lo), heat_color(hi));
        prop_assert!(cl[0] <= ch[0] && cl[2] >= ch[2] && cl[1] == 0 && ch[1] == 0);
    }
}

#[test]
fn random_embeddings_retrieve_at_chance() {
    let n = 200;
    let trials = 20;
    let hits: f64 = (0..trials).map(|t| retrieval_accuracy(&gaussian_unit(n, 16, t), &gaussian_unit(n, 16, 100 + t), &diagonal(n, 20), 20).unwrap()).sum();
    let mean = hits / trials as f64;
    let chance = 1.0 / n as f64;
    assert!(mean < 4.0 * chance, "mean top-1 {mean} vs chance {chance}");
}

#[test]
fn tsne_separates_clusters() {
    let mut rng = seed::rng(4);
    let mut x = Vec::new();
    for c in 0..3 {
        for _ in 0..40 {
            for d in 0..5 {
                let noise: f64 = StandardNormal.sample(&mut rng);
                x.push(if d == c { 10.0 } else { 0.0 } + 0.3 * noise);
            }
        }
    }
    let cfg = TsneConfig { perplexity: 10.0, iterations: 400, ..TsneConfig::default() };
    let y = tsne_1d(&x, 5, &cfg).unwrap();
    assert_eq!(y, tsne_1d(&x, 5, &cfg).unwrap());
    let range = |c: usize| {
        let s = &y[c * 40..(c + 1) * 40];
        (s.iter().copied().fold(f64::MAX, f64::min), s.iter().copied().fold(f64::MIN, f64::max))
    };
    let mut ranges: Vec<(f64, f64)> = (0..3).map(range).collect();
    ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!(ranges.windows(2).all(|w| w[0].1 < w[1].0), "{ranges:?}");
    assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn tsne_duplicates_share_values() {
    let mut x: Vec<f64> = (0..30).map(|i| (i * 7 % 11) as f64).collect();
    x.extend_from_slice(&x[0..3].to_vec());
    x.extend_from_slice(&x[9..12].to_vec());
    let y = tsne_1d(&x, 3, &TsneConfig { perplexity: 3.0, iterations: 200, ..TsneConfig::default() }).unwrap();
    assert_eq!(y[10], y[0]);
    assert_eq!(y[11], y[3]);
}

#[test]
fn heatmap_paints_only_given_pixels() {
    let img = heatmap_composite(&[0.0, 1.0, 0.25], &[[0, 0], [3, 1], [2, 2]], 4, 3).unwrap();
    let lit = (0..3).flat_map(|y| (0..4).map(move |x| (x, y))).filter(|&(x, y)| img.get(x, y) != [0.0; 3]).count();
    assert_eq!(lit, 3);
    assert_eq!(img.get(3, 1), [1.0, 0.0, 0.0]);
    assert!(heatmap_composite(&[1.5], &[[0, 0]], 2, 2).is_err());
    assert!(heatmap_composite(&[0.5], &[[2, 0]], 2, 2).is_err());
    assert!(heatmap_composite(&[0.5, 0.1], &[[0, 0]], 2, 2).is_err());
}
