use std::collections::HashSet;

use xmodal_core::geometry::build_correspondences;
use xmodal_core::synthdata::{effective_areas, generate_scene, layout, read_scene, sample_points, write_scene, SceneConfig};

fn small(seed: u64) -> SceneConfig {
    SceneConfig { points: 20_000, seed, ..SceneConfig::default() }
}

#[test]
fn points_are_area_uniform() {
    for seed in 0..10 {
        let cfg = small(seed);
        let (boxes, surfaces) = layout(&cfg).unwrap();
        let (_, which) = sample_points(&cfg, &surfaces, &boxes);
        let areas = effective_areas(&surfaces, &boxes);
        let total: f64 = areas.iter().sum();
        let mut counts = vec![0usize; surfaces.len()];
        which.iter().for_each(|&k| counts[k] += 1);
        let n = which.len() as f64;
        for (k, (&c, &a)) in counts.iter().zip(&areas).enumerate() {
            let p = a / total;
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n * p).abs() <= 5.0 * sigma.max(1.0), "seed {seed} surface {k}: {c} vs {}", n * p);
        }
    }
}

#[test]
fn scenes_hold_several_classes() {
    for seed in 0..5 {
        let scene = generate_scene(&small(seed)).unwrap();
        let labels: HashSet<u32> = scene.cloud.labels.as_ref().unwrap().iter().copied().collect();
        assert!(labels.len() >= 3, "seed {seed}: {labels:?}");
        assert_eq!(scene.cloud.len(), 20_000);
    }
}

#[test]
fn stored_correspondences_match_the_zbuffer() {
    let scene = generate_scene(&small(2)).unwrap();
    for v in &scene.views {
        let again = build_correspondences(&scene.cloud, &v.pose, &v.intrinsics);
        assert_eq!(again.entries, v.correspondences.entries);
    }
}

#[test]
fn scene_directory_round_trip() {
    let scene = generate_scene(&small(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(dir.path(), &scene).unwrap();
    let back = read_scene(dir.path()).unwrap();
    assert_eq!(back.cloud, scene.cloud);
    assert_eq!(back.views.len(), scene.views.len());
    for (a, b) in back.views.iter().zip(&scene.views) {
        assert_eq!(a.correspondences, b.correspondences);
        assert_eq!(a.intrinsics, b.intrinsics);
        for (x, y) in a.pose.rotation.iter().flatten().zip(b.pose.rotation.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in a.image.pixels.iter().zip(&b.image.pixels) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn missing_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(read_scene(dir.path().join("nope")).is_err());
}
