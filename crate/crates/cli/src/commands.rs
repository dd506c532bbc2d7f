use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use xmodal_core::config::{Preset, RunConfig};
use xmodal_core::eval::probe_csv;
use xmodal_core::geometry::{build_correspondences, voxelize};
use xmodal_core::nn::{decode_normalize, encode_image, read_checkpoint, write_checkpoint, Checkpoint};
use xmodal_core::pipeline::{
    evaluate_alignment, point_embeddings, pretrain_2d, pretrain_3d, prepare_scene, probe_benchmark, scene_config,
    stage1_images, FrozenTargets, Model2D, Model3D, TrainReport,
};
use xmodal_core::seed;
use xmodal_core::synthdata::{generate_scene, read_scene, write_image, write_scene};
use xmodal_core::viz::{heatmap_composite, tsne_1d};

use crate::manifest::{self, Entry};
use crate::{Command, Common};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Config { preset } => {
            let p = if preset == "full" { Preset::Full } else { Preset::Desk };
            print!("{}", RunConfig::preset(p).to_text());
            Ok(())
        }
        Command::GenData { common, out, scenes } => gen_data(&load_config(&common)?, &out, scenes),
        Command::Pretrain2d { common, data, out, iterations } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.stage1.iterations = n;
            }
            pretrain_2d_cmd(&cfg, &data, &out)
        }
        Command::Pretrain3d { common, data, out, frozen_2d, iterations } => {
            let mut cfg = load_config(&common)?;
            if let Some(n) = iterations {
                cfg.stage2.iterations = n;
            }
            pretrain_3d_cmd(&cfg, &data, &out, &frozen_2d)
        }
        Command::Probe { common, features_from, data, fractions, seeds, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(f) = fractions {
                cfg.probe.fractions = f;
            }
            if let Some(s) = seeds {
                cfg.probe.seeds = s;
            }
            probe(&cfg, &features_from, &data, out.as_deref())
        }
        Command::Visualize { common, ckpt, scene, out, view } => visualize(&load_config(&common)?, &ckpt, &scene, &out, view),
        Command::Retrieval { common, ckpt2d, ckpt3d, scene, view, pairs } => {
            retrieval(&load_config(&common)?, &ckpt2d, &ckpt3d, &scene, view, pairs)
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::desk(),
    };
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    read_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("csv")
}

fn gen_data(cfg: &RunConfig, out: &Path, scenes: usize) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut entries = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let sc = scene_config(&cfg.scene, cfg.seed, i);
        let scene = generate_scene(&sc)?;
        let directory = manifest::scene_dir_name(i);
        write_scene(out.join(&directory), &scene)?;
        log::info!("scene {i}: {} points, {} views, seed {}", scene.cloud.len(), scene.views.len(), sc.seed);
        entries.push(Entry { index: i, directory, seed: sc.seed });
    }
    write_text(&out.join(manifest::MANIFEST_FILE), &manifest::to_csv(&entries))?;
    write_text(&out.join("config.txt"), &cfg.to_text())
}

fn finish_training(out: &Path, ckpt: &Checkpoint, report: &TrainReport) -> Result<()> {
    write_checkpoint(out, ckpt).with_context(|| format!("writing {}", out.display()))?;
    write_text(&report_path(out), &report.to_csv())?;
    if let (Some(first), Some(last)) = (report.history.first(), report.history.last()) {
        log::info!(
            "{} iterations: loss/query {:.4} -> {:.4}, alignment gap {:.4}",
            report.history.len(),
            first.loss_per_query,
            last.loss_per_query,
            last.alignment_gap
        );
    }
    Ok(())
}

fn pretrain_2d_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let scenes = manifest::load_scenes(data)?;
    let (model, report) = pretrain_2d(&stage1_images(&scenes), &cfg.stage1)?;
    finish_training(out, &model.to_checkpoint(), &report)
}

fn pretrain_3d_cmd(cfg: &RunConfig, data: &Path, out: &Path, frozen: &Path) -> Result<()> {
    let model2d = Model2D::from_checkpoint(&load_checkpoint(frozen)?).context("frozen 2D checkpoint")?;
    let scenes = manifest::load_scenes(data)?;
    let targets = FrozenTargets::build(&scenes, &model2d, &cfg.stage2)?;
    let (model, report) = pretrain_3d(&targets, &cfg.stage2)?;
    finish_training(out, &model.to_checkpoint(), &report)
}

fn probe(cfg: &RunConfig, features_from: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let model = Model3D::from_checkpoint(&load_checkpoint(features_from)?).context("3D checkpoint")?;
    let scenes = manifest::load_scenes(data)?;
    let test = cfg.probe.test_scenes;
    if test == 0 || test >= scenes.len() {
        bail!("probe needs more than probe.test_scenes = {test} scenes and at least one test scene, found {}", scenes.len());
    }
    let clouds = scenes
        .iter()
        .map(|s| Ok(voxelize(&s.cloud, cfg.stage2.voxel_size)?.0))
        .collect::<Result<Vec<_>>>()?;
    let (train, held) = clouds.split_at(clouds.len() - test);
    let records = probe_benchmark(&model, train, held, &cfg.probe, cfg.seed)?;
    let csv = probe_csv(&records);
    match out {
        Some(p) => write_text(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

/// `<stem>_input.ppm` next to `out`.
fn input_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_input.ppm"))
}

fn visualize(cfg: &RunConfig, ckpt: &Path, scene_dir: &Path, out: &Path, view: usize) -> Result<()> {
    let ckpt = load_checkpoint(ckpt)?;
    let scene = read_scene(scene_dir).with_context(|| format!("reading scene {}", scene_dir.display()))?;
    let Some(v) = scene.views.get(view) else { bail!("scene has {} views, asked for view {view}", scene.views.len()) };
    let (w, h) = (v.intrinsics.width as usize, v.intrinsics.height as usize);
    let heat = if let Ok(m) = Model2D::from_checkpoint(&ckpt) {
        let emb = decode_normalize(&m.head, &encode_image(&m.encoder, &v.image)?.data)?;
        let values = tsne_1d(&emb.data, emb.dim, &cfg.tsne)?;
        let coords: Vec<[usize; 2]> = (0..h).flat_map(|y| (0..w).map(move |x| [x, y])).collect();
        write_image(input_path(out), &v.image)?;
        heatmap_composite(&values, &coords, w, h)?
    } else {
        let m = Model3D::from_checkpoint(&ckpt).context("checkpoint is neither a 2D nor a 3D model")?;
        let (cloud, _) = voxelize(&scene.cloud, cfg.stage2.voxel_size)?;
        let emb = point_embeddings(&m, &cloud)?;
        let values = tsne_1d(&emb.data, emb.dim, &cfg.tsne)?;
        let corr = build_correspondences(&cloud, &v.pose, &v.intrinsics);
        let visible: Vec<f64> = corr.entries.iter().map(|e| values[e.point_index]).collect();
        let coords: Vec<[usize; 2]> = corr.entries.iter().map(|e| [e.pixel[0] as usize, e.pixel[1] as usize]).collect();
        heatmap_composite(&visible, &coords, w, h)?
    };
    write_image(out, &heat)?;
    Ok(())
}

fn retrieval(cfg: &RunConfig, ckpt2d: &Path, ckpt3d: &Path, scene_dir: &Path, view: usize, pairs: usize) -> Result<()> {
    let m2 = Model2D::from_checkpoint(&load_checkpoint(ckpt2d)?).context("2D checkpoint")?;
    let m3 = Model3D::from_checkpoint(&load_checkpoint(ckpt3d)?).context("3D checkpoint")?;
    let scene = read_scene(scene_dir).with_context(|| format!("reading scene {}", scene_dir.display()))?;
    let prepared = prepare_scene(&scene, &m2, cfg.stage2.crop, cfg.stage2.voxel_size)?;
    let r = evaluate_alignment(&m3, &prepared, &scene.cloud, view, pairs, seed::derive(cfg.seed, &[0xe1]))?;
    println!("top1 {:.4} chance {:.4} mean_cosine {:.4} pairs {}", r.top1, r.chance, r.mean_cosine, r.pairs);
    Ok(())
}
