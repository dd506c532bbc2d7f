use rand::Rng;
use xmodal_core::geometry::PointCloud;
use xmodal_core::loss::{LossConfig, NegativeCount};
use xmodal_core::nn::{gradient_check, EmbeddingSet, GradCheckConfig, ParamSet, Probe};
use xmodal_core::pipeline::{stage2_objective, Model3D, NegativeSource, Stage2Sample};
use xmodal_core::seed;

fn sample(s: u64, n: usize, take: usize, dim: usize) -> Stage2Sample {
    let mut rng = seed::rng(s);
    let cloud = PointCloud::new(
        (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect(),
        (0..n).map(|_| std::array::from_fn(|_| rng.random())).collect(),
        None,
    )
    .unwrap();
    let mut targets = EmbeddingSet::empty(dim);
    for _ in 0..take {
        let r: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        targets.push(&r.iter().map(|v| v / norm).collect::<Vec<_>>());
    }
    Stage2Sample { cloud, points: (0..take).map(|i| i * 3 % n).collect(), targets }
}

fn check(source: NegativeSource, negatives: NegativeCount) {
    let model = Model3D::new(8, 8, 4, 3);
    let samples = vec![sample(1, 40, 6, 8), sample(2, 30, 5, 8)];
    let loss = LossConfig::new(0.3, negatives).unwrap();
    let eval = stage2_objective(&model, &samples, &loss, source, 7).unwrap();
    assert!(eval.queries.max_norm_deviation() < 1e-9);
    let report = gradient_check(
        |p: &[f64]| {
            let mut m = model.clone();
            m.set_flat(p);
            let e = stage2_objective(&m, &samples, &loss, source, 7).unwrap();
            Probe { loss: e.output.total, regime: e.regime }
        },
        &model.flatten(),
        &eval.grads.flatten(),
        &GradCheckConfig { samples: 600, ..Default::default() },
    )
    .unwrap();
    assert!(report.checked > 0);
    assert!(report.max_rel_error < 1e-4, "{source:?} {negatives:?}: {report:?}");
}

#[test]
fn point_objective_gradients_points_only() {
    check(NegativeSource::PointsOnly, NegativeCount::AllInBatch);
}

#[test]
fn point_objective_gradients_with_pixel_negatives() {
    check(NegativeSource::PointsAndPixels, NegativeCount::AllInBatch);
}

#[test]
fn point_objective_gradients_sampled_negatives() {
    check(NegativeSource::PointsAndPixels, NegativeCount::PerQuery(4));
}

#[test]
fn mismatched_targets_are_rejected() {
    let model = Model3D::new(8, 8, 4, 3);
    let mut s = sample(1, 20, 4, 8);
    s.points.pop();
    let loss = LossConfig::default();
    assert!(stage2_objective(&model, &[s], &loss, NegativeSource::PointsOnly, 0).is_err());
}
