use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use xmodal_core::loss::{info_nce, info_nce_in_batch, LossConfig, LossError, NegativeCount, NegativePool};
use xmodal_core::nn::{gradient_check, EmbeddingSet, GradCheckConfig};
use xmodal_core::seed;

fn normalize(x: &[f64], dim: usize) -> EmbeddingSet {
    let mut data = x.to_vec();
    for r in data.chunks_mut(dim) {
        let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        r.iter_mut().for_each(|v| *v /= n);
    }
    EmbeddingSet::new(dim, data)
}

fn random_unit(rows: usize, dim: usize, s: u64) -> EmbeddingSet {
    let mut rng = seed::rng(s);
    normalize(&(0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(), dim)
}

fn cfg(tau: f64) -> LossConfig {
    LossConfig::new(tau, NegativeCount::AllInBatch).unwrap()
}

/// Pulls `d_z` back through row-wise `z = x / |x|`.
fn through_normalization(x: &[f64], d_z: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ((xr, gr), o) in x.chunks(dim).zip(d_z.chunks(dim)).zip(out.chunks_mut(dim)) {
        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
        let zg: f64 = xr.iter().zip(gr).map(|(a, b)| a / n * b).sum();
        for k in 0..dim {
            o[k] = (gr[k] - xr[k] / n * zg) / n;
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn bounded_below_by_the_perfect_case(s in any::<u64>(), tau in 0.05f64..1.0, k in 1usize..12) {
        let (q, p, n) = (random_unit(6, 5, s), random_unit(6, 5, s ^ 1), random_unit(k, 5, s ^ 2));
        let out = info_nce(&q, &p, &n, &cfg(tau)).unwrap();
        let floor = (1.0 + k as f64 * (-2.0 / tau).exp()).ln();
        prop_assert!(out.per_query.iter().all(|&l| l >= floor - 1e-12));
    }

    #[test]
    fn negative_order_does_not_matter(s in any::<u64>()) {
        let (q, p, n) = (random_unit(5, 4, s), random_unit(5, 4, s ^ 1), random_unit(9, 4, s ^ 2));
        let mut order: Vec<usize> = (0..9).collect();
        order.shuffle(&mut seed::rng(s));
        let a = info_nce(&q, &p, &n, &cfg(0.3)).unwrap();
        let b = info_nce(&q, &p, &n.select(&order), &cfg(0.3)).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn closer_positive_lowers_the_loss(s in any::<u64>(), t in 0.05f64..0.95) {
        let q = random_unit(1, 4, s);
        let far = random_unit(1, 4, s ^ 1);
        let n = random_unit(5, 4, s ^ 2);
        let mix: Vec<f64> = q.data.iter().zip(&far.data).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let closer = normalize(&mix, 4);
        prop_assume!(closer.data.iter().zip(&q.data).map(|(a, b)| a * b).sum::<f64>() > far.data.iter().zip(&q.data).map(|(a, b)| a * b).sum::<f64>() + 1e-9);
        let a = info_nce(&q, &far, &n, &cfg(0.4)).unwrap().total;
        let b = info_nce(&q, &closer, &n, &cfg(0.4)).unwrap().total;
        prop_assert!(b < a);
    }

    #[test]
    fn gradients_match_differences_through_normalization(s in any::<u64>(), tau in 0.1f64..1.0) {
        let dim = 4;
        let mut rng = seed::rng(s);
        let raw: Vec<f64> = (0..(3 + 3 + 4) * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let split = |x: &[f64]| (normalize(&x[..3 * dim], dim), normalize(&x[3 * dim..6 * dim], dim), normalize(&x[6 * dim..], dim));
        let (q, p, n) = split(&raw);
        let out = info_nce(&q, &p, &n, &cfg(tau)).unwrap();
        let dz: Vec<f64> = [out.grad_queries, out.grad_positives, out.grad_negatives].concat();
        let analytic = through_normalization(&raw, &dz, dim);
        let report = gradient_check(
            |x: &[f64]| {
                let (q, p, n) = split(x);
                info_nce(&q, &p, &n, &cfg(tau)).unwrap().total
            },
            &raw,
            &analytic,
            &GradCheckConfig { eps: 1e-6, samples: 1000, seed: s },
        )
        .unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}

#[test]
fn low_temperature_stays_finite() {
    let q = random_unit(8, 6, 1);
    let n = random_unit(8, 6, 2);
    let neg: Vec<f64> = q.data.iter().map(|v| -v).collect();
    for (pos, negs) in [(&q, &n), (&n, &EmbeddingSet::new(6, neg))] {
        let out = info_nce(&q, pos, negs, &cfg(0.01)).unwrap();
        assert!(out.total.is_finite());
        assert!(out.grad_queries.iter().chain(&out.grad_negatives).all(|g| g.is_finite()));
    }
}

#[test]
fn temperature_limit() {
    let q = random_unit(4, 3, 7);
    let p = random_unit(4, 3, 8);
    let n = random_unit(6, 3, 9);
    let tau = 0.01;
    let out = info_nce(&q, &p, &n, &cfg(tau)).unwrap();
    for i in 0..4 {
        let sp: f64 = q.row(i).iter().zip(p.row(i)).map(|(a, b)| a * b).sum();
        let best = (0..6).map(|j| q.row(i).iter().zip(n.row(j)).map(|(a, b)| a * b).sum::<f64>()).fold(f64::MIN, f64::max);
        let hinge = (best - sp).max(0.0) / tau;
        assert!((out.per_query[i] - hinge).abs() < 2.0, "{} vs {hinge}", out.per_query[i]);
    }
}

#[test]
fn in_batch_sampling_is_seeded() {
    let (q, p) = (random_unit(12, 4, 1), random_unit(12, 4, 2));
    let c = LossConfig::new(0.4, NegativeCount::PerQuery(5)).unwrap();
    let a = info_nce_in_batch(&q, &p, NegativePool::QueriesAndPositives, &c, 3).unwrap();
    let b = info_nce_in_batch(&q, &p, NegativePool::QueriesAndPositives, &c, 3).unwrap();
    let d = info_nce_in_batch(&q, &p, NegativePool::QueriesAndPositives, &c, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.total, d.total);
}

#[test]
fn rejects_invalid_input() {
    let q = random_unit(2, 3, 1);
    assert!(matches!(LossConfig::new(0.0, NegativeCount::AllInBatch), Err(LossError::BadTemperature(_))));
    assert!(matches!(LossConfig::new(1.5, NegativeCount::AllInBatch), Err(LossError::BadTemperature(_))));
    let long = EmbeddingSet::new(3, vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!(matches!(info_nce(&q, &long, &q, &cfg(0.4)), Err(LossError::NotNormalized { row: 0, .. })));
    assert!(matches!(info_nce(&q, &random_unit(3, 3, 2), &q, &cfg(0.4)), Err(LossError::Shape(_))));
}
