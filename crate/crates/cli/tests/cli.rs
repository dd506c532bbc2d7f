use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;
use xmodal_core::config::RunConfig;
use xmodal_core::nn::read_checkpoint;
use xmodal_core::pipeline::{Model2D, Model3D};
use xmodal_core::synthdata::read_image;

const SMALL: &str = "preset = desk
scene.points = 20000
stage1.iterations = 3
stage2.iterations = 3
probe.seeds = 3
probe.epochs = 20
probe.test_scenes = 1
tsne.iterations = 60
";

fn xmodal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmodal")).current_dir(dir).args(args).output().expect("spawn xmodal")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = xmodal(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Temp dir with `c.txt` and three generated scenes in `data`.
fn workspace() -> TempDir {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("c.txt"), SMALL).unwrap();
    ok(t.path(), &["gen-data", "--config", "c.txt", "--out", "data", "--scenes", "3"]);
    t
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    for e in walk(dir) {
        v.push((e.strip_prefix(dir).unwrap().display().to_string(), fs::read(&e).unwrap()));
    }
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn gen_data_writes_complete_scenes() {
    let t = workspace();
    let data = t.path().join("data");
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 4);
    for i in 0..3 {
        let d = data.join(format!("scene_{i:03}"));
        assert!(d.join("cloud.pctxt").exists());
        for v in 0..2 {
            for ext in ["camtxt", "ppm", "corrtxt"] {
                assert!(d.join(format!("view_{v}.{ext}")).exists(), "missing view_{v}.{ext}");
            }
        }
    }
}

#[test]
fn gen_data_is_reproducible_and_seeded() {
    let t = workspace();
    ok(t.path(), &["gen-data", "--config", "c.txt", "--out", "again", "--scenes", "3"]);
    assert_eq!(files(&t.path().join("data")), files(&t.path().join("again")));
    ok(t.path(), &["gen-data", "--config", "c.txt", "--out", "other", "--scenes", "1", "--seed", "5"]);
    let a = fs::read_to_string(t.path().join("data/manifest.csv")).unwrap();
    let b = fs::read_to_string(t.path().join("other/manifest.csv")).unwrap();
    assert_ne!(a.lines().nth(1), b.lines().nth(1));
}

#[test]
fn gen_data_zero_scenes() {
    let t = tempfile::tempdir().unwrap();
    ok(t.path(), &["gen-data", "--out", "empty", "--scenes", "0"]);
    assert_eq!(fs::read_to_string(t.path().join("empty/manifest.csv")).unwrap(), "index,directory,seed\n");
}

#[test]
fn pretrain_3d_requires_frozen_checkpoint() {
    let t = tempfile::tempdir().unwrap();
    let out = xmodal(t.path(), &["pretrain-3d", "--data", "data", "--out", "m3.xmdl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_an_error() {
    let t = tempfile::tempdir().unwrap();
    fs::write(t.path().join("bad.txt"), "stage1.bogus = 1\n").unwrap();
    let out = xmodal(t.path(), &["gen-data", "--config", "bad.txt", "--out", "d", "--scenes", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));
}

#[test]
fn corrupt_checkpoint_exits_one() {
    let t = workspace();
    fs::write(t.path().join("bad.xmdl"), b"not a checkpoint").unwrap();
    let out = xmodal(t.path(), &["pretrain-3d", "--config", "c.txt", "--data", "data", "--out", "m3.xmdl", "--frozen-2d", "bad.xmdl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_command_prints_a_parsable_preset() {
    let t = tempfile::tempdir().unwrap();
    for preset in ["desk", "full"] {
        let text = ok(t.path(), &["config", "--preset", preset]);
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.preset.to_string(), preset);
    }
}

#[test]
fn zero_iterations_checkpoint_equals_init() {
    let t = workspace();
    let p = t.path();
    ok(p, &["pretrain-2d", "--config", "c.txt", "--data", "data", "--out", "m2.xmdl", "--iterations", "0", "--seed", "4"]);
    ok(p, &["pretrain-3d", "--config", "c.txt", "--data", "data", "--out", "m3.xmdl", "--frozen-2d", "m2.xmdl", "--iterations", "0", "--seed", "4"]);
    let cfg = RunConfig::parse(SMALL).unwrap();
    let (s1, s2) = (&cfg.stage1, &cfg.stage2);
    assert_eq!(read_checkpoint(p.join("m2.xmdl")).unwrap(), Model2D::new(s1.embed_dim, s1.head_dim, 4).to_checkpoint());
    assert_eq!(read_checkpoint(p.join("m3.xmdl")).unwrap(), Model3D::new(s2.embed_dim, s2.head_dim, s2.k, 4).to_checkpoint());
    assert_eq!(fs::read_to_string(p.join("m2.csv")).unwrap(), "iteration,loss,loss_per_query,alignment_gap,lr\n");
}

#[test]
fn training_writes_report_and_is_reproducible() {
    let t = workspace();
    let p = t.path();
    for out in ["a.xmdl", "b.xmdl"] {
        ok(p, &["pretrain-2d", "--config", "c.txt", "--data", "data", "--out", out]);
    }
    assert_eq!(fs::read(p.join("a.xmdl")).unwrap(), fs::read(p.join("b.xmdl")).unwrap());
    assert_eq!(fs::read(p.join("a.csv")).unwrap(), fs::read(p.join("b.csv")).unwrap());
    assert_eq!(fs::read_to_string(p.join("a.csv")).unwrap().lines().count(), 4);
}

#[test]
fn probe_visualize_and_retrieval() {
    let t = workspace();
    let p = t.path();
    ok(p, &["pretrain-2d", "--config", "c.txt", "--data", "data", "--out", "m2.xmdl"]);
    ok(p, &["pretrain-3d", "--config", "c.txt", "--data", "data", "--out", "m3.xmdl", "--frozen-2d", "m2.xmdl", "--iterations", "0"]);

    let csv = ok(p, &["probe", "--config", "c.txt", "--features-from", "m3.xmdl", "--data", "data", "--fractions", "0.1,0.5,1.0"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("label_fraction,init_kind,seed,miou"));
    assert_eq!(lines.count(), 3 * 2 * 3);

    ok(p, &["visualize", "--config", "c.txt", "--ckpt", "m2.xmdl", "--scene", "data/scene_000", "--out", "v2.ppm"]);
    ok(p, &["visualize", "--config", "c.txt", "--ckpt", "m3.xmdl", "--scene", "data/scene_000", "--out", "v3.ppm"]);
    for f in ["v2.ppm", "v2_input.ppm", "v3.ppm"] {
        let img = read_image(p.join(f)).unwrap();
        assert_eq!((img.width, img.height), (64, 64), "{f}");
    }

    let line = ok(p, &["retrieval", "--config", "c.txt", "--ckpt2d", "m2.xmdl", "--ckpt3d", "m3.xmdl", "--scene", "data/scene_002"]);
    let fields: Vec<&str> = line.split_whitespace().collect();
    let top1: f64 = fields[1].parse().unwrap();
    let chance: f64 = fields[3].parse().unwrap();
    assert!(top1 <= 5.0 * chance, "untrained retrieval {top1} vs chance {chance}");
}
