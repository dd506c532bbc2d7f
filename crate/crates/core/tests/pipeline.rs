use xmodal_core::nn::ParamSet;
use xmodal_core::pipeline::{
    pretrain_2d, pretrain_3d, stage1_images, FrozenTargets, Model2D, Model3D, PipelineError, Stage1Config, Stage2Config,
};
use xmodal_core::synthdata::{generate_scene, SceneConfig, SyntheticScene};

fn scenes(n: u64) -> Vec<SyntheticScene> {
    (0..n).map(|s| generate_scene(&SceneConfig { points: 20_000, seed: 40 + s, ..SceneConfig::default() }).unwrap()).collect()
}

fn stage1(iterations: usize) -> Stage1Config {
    Stage1Config { iterations, batch_pairs: 2, pixels_per_pair: 64, ..Stage1Config::desk() }
}

fn stage2(iterations: usize) -> Stage2Config {
    Stage2Config { iterations, batch_pairs: 2, correspondences_per_pair: 64, ..Stage2Config::desk() }
}

#[test]
fn short_runs_are_reproducible() {
    let data = scenes(2);
    let images = stage1_images(&data);
    let (m2a, ra) = pretrain_2d(&images, &stage1(4)).unwrap();
    let (m2b, rb) = pretrain_2d(&images, &stage1(4)).unwrap();
    assert_eq!(m2a, m2b);
    assert_eq!(ra.to_csv(), rb.to_csv());
    assert_eq!(ra.history.len(), 4);

    let targets = FrozenTargets::build(&data, &m2a, &stage2(4)).unwrap();
    let before = targets.fingerprint();
    let (m3a, r3a) = pretrain_3d(&targets, &stage2(4)).unwrap();
    let (m3b, _) = pretrain_3d(&targets, &stage2(4)).unwrap();
    assert_eq!(m3a, m3b);
    assert_eq!(targets.fingerprint(), before);
    assert!(r3a.history.iter().all(|r| r.loss.is_finite() && r.lr > 0.0));
}

#[test]
fn zero_iterations_return_the_initialisation() {
    let data = scenes(1);
    let cfg = stage1(0);
    let (m2, report) = pretrain_2d(&stage1_images(&data), &cfg).unwrap();
    assert_eq!(m2, Model2D::new(cfg.embed_dim, cfg.head_dim, cfg.seed));
    assert!(report.history.is_empty());
    let c2 = stage2(0);
    let (m3, _) = pretrain_3d(&FrozenTargets::build(&data, &m2, &c2).unwrap(), &c2).unwrap();
    assert_eq!(m3, Model3D::new(c2.embed_dim, c2.head_dim, c2.k, c2.seed));
}

#[test]
fn training_moves_parameters_and_seeds_matter() {
    let data = scenes(1);
    let images = stage1_images(&data);
    let cfg = stage1(3);
    let (m, _) = pretrain_2d(&images, &cfg).unwrap();
    let init = Model2D::new(cfg.embed_dim, cfg.head_dim, cfg.seed);
    assert_ne!(m.flatten(), init.flatten());
    let (other, _) = pretrain_2d(&images, &Stage1Config { seed: 1, ..cfg }).unwrap();
    assert_ne!(m, other);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert_eq!(pretrain_2d(&[], &stage1(1)).unwrap_err(), PipelineError::EmptyDataset);
    let data = scenes(1);
    let images = stage1_images(&data);
    let wide = Stage1Config { head_dim: 32, ..stage1(1) };
    assert!(matches!(pretrain_2d(&images, &wide), Err(PipelineError::InvalidConfig(_))));
    let m2 = Model2D::new(16, 16, 0);
    let empty = FrozenTargets::build(&[], &m2, &stage2(1)).unwrap();
    assert_eq!(pretrain_3d(&empty, &stage2(1)).unwrap_err(), PipelineError::EmptyDataset);
    let bad = Stage2Config { voxel_size: 0.0, ..stage2(1) };
    assert!(matches!(bad.validate(), Err(PipelineError::InvalidConfig(_))));
}
