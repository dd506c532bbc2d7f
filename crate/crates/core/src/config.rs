//! Flat `key = value` run configuration covering every module, with the `desk` and
//! `full` presets.
//!
//! Lines are `key = value`; `#` starts a comment. A `preset` line, if present, must come
//! before any other key and resets every value to that preset. Unknown keys are errors.
//! [`KEYS`] documents each key; [`RunConfig::to_text`] prints a complete config.

use std::fmt::{self, Write as _};
use std::path::Path;

use crate::augment::{Transform2D, Transform3D, TransformSpec2D, TransformSpec3D};
use crate::eval::ProbeSettings;
use crate::loss::NegativeCount;
use crate::pipeline::{NegativeSource, Stage1Config, Stage2Config};
use crate::synthdata::SceneConfig;
use crate::viz::TsneConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue { line: usize, key: String, msg: String },
    #[error("line {line}: `preset` must precede every other key")]
    LatePreset { line: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub scene: SceneConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub probe: ProbeSettings,
    pub tsne: TsneConfig,
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("preset", "desk | full; resets all values, must come first"),
    ("seed", "base seed for scenes, initialisation, sampling and augmentation"),
    ("scene.room", "room extents x,y,z in metres"),
    ("scene.num_objects", "boxes per scene"),
    ("scene.object_classes", "comma-separated class ids boxes are drawn from"),
    ("scene.points", "points sampled per scene before voxelization"),
    ("scene.cameras", "views rendered per scene"),
    ("scene.image_size", "WxH of rendered views"),
    ("scene.fov_deg", "horizontal field of view in degrees"),
    ("scene.object_jitter", "half-width of the per-object colour offset"),
    ("scene.color_noise", "standard deviation of per-point colour noise"),
    ("stage1.batch_pairs", "images per iteration"),
    ("stage1.pixels_per_pair", "matched pixels sampled per view pair"),
    ("stage1.tau", "InfoNCE temperature"),
    ("stage1.negatives", "all | k negatives per query"),
    ("stage1.lr", "initial learning rate"),
    ("stage1.iterations", "optimiser steps"),
    ("stage1.view_size", "WxH of each augmented view"),
    ("stage1.crop_scale", "min,max area fraction of the random crop"),
    ("stage1.flip_p", "horizontal flip probability"),
    ("stage1.color_jitter", "brightness, contrast and saturation jitter"),
    ("stage1.grayscale_p", "greyscale probability"),
    ("stage1.embed_dim", "encoder output width D"),
    ("stage1.head_dim", "embedding width M"),
    ("stage2.batch_pairs", "scene views per iteration"),
    ("stage2.correspondences_per_pair", "point-pixel matches sampled per view"),
    ("stage2.crop", "none | WxH centre crop before the frozen image encoder"),
    ("stage2.voxel_size", "voxel edge in metres"),
    ("stage2.tau", "InfoNCE temperature"),
    ("stage2.negatives", "all | k negatives per query"),
    ("stage2.negative_source", "points | points+pixels"),
    ("stage2.lr", "initial learning rate"),
    ("stage2.iterations", "optimiser steps"),
    ("stage2.rotation", "min,max rotation about z in radians"),
    ("stage2.keep_prob", "point dropout keep probability"),
    ("stage2.color_jitter", "brightness and contrast jitter of point colours"),
    ("stage2.embed_dim", "encoder output width D"),
    ("stage2.head_dim", "embedding width M; must match the frozen image head"),
    ("stage2.k", "neighbours aggregated per point"),
    ("optim.momentum", "SGD momentum (both stages)"),
    ("optim.dampening", "SGD dampening (both stages)"),
    ("optim.weight_decay", "L2 weight decay (both stages)"),
    ("optim.gamma", "learning-rate decay factor (both stages)"),
    ("optim.decay_every", "iterations between decays (both stages)"),
    ("probe.fractions", "comma-separated label fractions"),
    ("probe.seeds", "seeds per fraction and initialisation"),
    ("probe.epochs", "full-batch gradient steps"),
    ("probe.lr", "probe learning rate"),
    ("probe.l2", "probe weight penalty"),
    ("probe.pool", "labeled pool size drawn from training scenes, 0 = all points"),
    ("probe.test_scenes", "trailing scenes held out for testing"),
    ("tsne.perplexity", "target perplexity, clamped to (n-1)/3"),
    ("tsne.iterations", "gradient steps"),
    ("tsne.learning_rate", "step size"),
    ("tsne.subsample_cap", "rows embedded exactly"),
];

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e: T::Err| e.to_string())
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|s| parse_num(s.trim())).collect()
}

fn parse_pair(v: &str) -> Result<(f64, f64), String> {
    match parse_list(v)?[..] {
        [a, b] => Ok((a, b)),
        _ => Err("expected two comma-separated numbers".into()),
    }
}

fn parse_size(v: &str) -> Result<(usize, usize), String> {
    let (w, h) = v.split_once('x').ok_or("expected WxH")?;
    Ok((parse_num(w.trim())?, parse_num(h.trim())?))
}

fn parse_negatives(v: &str) -> Result<NegativeCount, String> {
    if v == "all" { Ok(NegativeCount::AllInBatch) } else { Ok(NegativeCount::PerQuery(parse_num(v)?)) }
}

fn show_negatives(n: NegativeCount) -> String {
    match n {
        NegativeCount::AllInBatch => "all".into(),
        NegativeCount::PerQuery(k) => k.to_string(),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn view_spec(size: (usize, usize), scale: (f64, f64), flip: f64, jitter: f64, gray: f64) -> TransformSpec2D {
    TransformSpec2D {
        transforms: vec![
            Transform2D::RandomResizedCrop { scale, out_size: size },
            Transform2D::HorizontalFlip { p: flip },
            Transform2D::ColorJitter { brightness: jitter, contrast: jitter, saturation: jitter },
            Transform2D::Grayscale { p: gray },
        ],
    }
}

/// View parameters as edited through the config (both views share them).
#[derive(Clone, Copy)]
struct ViewParams {
    size: (usize, usize),
    scale: (f64, f64),
    flip: f64,
    jitter: f64,
    gray: f64,
}

impl ViewParams {
    fn of(spec: &TransformSpec2D) -> Self {
        let mut p = ViewParams { size: (0, 0), scale: (1.0, 1.0), flip: 0.0, jitter: 0.0, gray: 0.0 };
        for t in &spec.transforms {
            match *t {
                Transform2D::RandomResizedCrop { scale, out_size } => {
                    p.size = out_size;
                    p.scale = scale;
                }
                Transform2D::HorizontalFlip { p: f } => p.flip = f,
                Transform2D::ColorJitter { brightness, .. } => p.jitter = brightness,
                Transform2D::Grayscale { p: g } => p.gray = g,
            }
        }
        p
    }

    fn spec(&self) -> TransformSpec2D {
        view_spec(self.size, self.scale, self.flip, self.jitter, self.gray)
    }
}

#[derive(Clone, Copy)]
struct CloudParams {
    rotation: (f64, f64),
    keep: f64,
    jitter: f64,
}

impl CloudParams {
    fn of(spec: &TransformSpec3D) -> Self {
        let mut p = CloudParams { rotation: (0.0, 0.0), keep: 1.0, jitter: 0.0 };
        for t in &spec.transforms {
            match *t {
                Transform3D::RotationZ { angle_range } => p.rotation = angle_range,
                Transform3D::PointDropout { keep_prob } => p.keep = keep_prob,
                Transform3D::ColorJitter3D { brightness, .. } => p.jitter = brightness,
            }
        }
        p
    }

    fn spec(&self) -> TransformSpec3D {
        TransformSpec3D {
            transforms: vec![
                Transform3D::RotationZ { angle_range: self.rotation },
                Transform3D::PointDropout { keep_prob: self.keep },
                Transform3D::ColorJitter3D { brightness: self.jitter, contrast: self.jitter },
            ],
        }
    }
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            seed: 0,
            scene: SceneConfig::default(),
            stage1: Stage1Config::desk(),
            stage2: Stage2Config::desk(),
            probe: ProbeSettings::default(),
            tsne: TsneConfig::default(),
        }
    }

    pub fn full() -> Self {
        Self { preset: Preset::Full, stage1: Stage1Config::full(), stage2: Stage2Config::full(), ..Self::desk() }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Full => Self::full(),
        }
    }

    /// Sets the base seed everywhere it is consumed.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.scene.seed = seed;
        self.stage1.seed = seed;
        self.stage2.seed = seed;
        self.tsne.seed = seed;
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::desk();
        let mut seen_other = false;
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if seen_other {
                    return Err(ConfigError::LatePreset { line });
                }
                let p = match value {
                    "desk" => Preset::Desk,
                    "full" => Preset::Full,
                    _ => return Err(ConfigError::BadValue { line, key: key.into(), msg: "expected desk or full".into() }),
                };
                cfg = Self::preset(p);
                continue;
            }
            seen_other = true;
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(ConfigError::UnknownKey { line, key: key.into() });
            }
            cfg.set(key, value).map_err(|msg| ConfigError::BadValue { line, key: key.into(), msg })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn fmt::Display| ConfigError::Invalid(e.to_string());
        self.scene.validate().map_err(|e| inv(&e))?;
        self.stage1.validate().map_err(|e| inv(&e))?;
        self.stage2.validate().map_err(|e| inv(&e))?;
        self.tsne.validate().map_err(|e| inv(&e))?;
        if self.stage1.head_dim != self.stage2.head_dim {
            return Err(ConfigError::Invalid("stage1.head_dim and stage2.head_dim must agree".into()));
        }
        self.probe.validate().map_err(|e| inv(&e))?;
        Ok(())
    }

    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        if key == "seed" {
            self.set_seed(parse_num(v)?);
            return Ok(());
        }
        let s1 = &mut self.stage1;
        let s2 = &mut self.stage2;
        let mut view = ViewParams::of(&s1.view_a);
        let mut cloud = CloudParams::of(&s2.cloud_aug);
        match key {
            "scene.room" => {
                let r = parse_list(v)?;
                self.scene.room = r.try_into().map_err(|_| "expected three numbers")?;
            }
            "scene.num_objects" => self.scene.num_objects = parse_num(v)?,
            "scene.object_classes" => {
                self.scene.object_classes = v.split(',').map(|s| parse_num(s.trim())).collect::<Result<_, _>>()?
            }
            "scene.points" => self.scene.points = parse_num(v)?,
            "scene.cameras" => self.scene.cameras = parse_num(v)?,
            "scene.image_size" => {
                let (w, h) = parse_size(v)?;
                self.scene.image_size = (w as u32, h as u32);
            }
            "scene.fov_deg" => self.scene.fov_x = parse_num::<f64>(v)?.to_radians(),
            "scene.object_jitter" => self.scene.object_jitter = parse_num(v)?,
            "scene.color_noise" => self.scene.color_noise = parse_num(v)?,
            "stage1.batch_pairs" => s1.batch_pairs = parse_num(v)?,
            "stage1.pixels_per_pair" => s1.pixels_per_pair = parse_num(v)?,
            "stage1.tau" => s1.loss.tau = parse_num(v)?,
            "stage1.negatives" => s1.loss.negatives = parse_negatives(v)?,
            "stage1.lr" => s1.optim.lr0 = parse_num(v)?,
            "stage1.iterations" => s1.iterations = parse_num(v)?,
            "stage1.view_size" => view.size = parse_size(v)?,
            "stage1.crop_scale" => view.scale = parse_pair(v)?,
            "stage1.flip_p" => view.flip = parse_num(v)?,
            "stage1.color_jitter" => view.jitter = parse_num(v)?,
            "stage1.grayscale_p" => view.gray = parse_num(v)?,
            "stage1.embed_dim" => s1.embed_dim = parse_num(v)?,
            "stage1.head_dim" => s1.head_dim = parse_num(v)?,
            "stage2.batch_pairs" => s2.batch_pairs = parse_num(v)?,
            "stage2.correspondences_per_pair" => s2.correspondences_per_pair = parse_num(v)?,
            "stage2.crop" => s2.crop = if v == "none" { None } else { Some(parse_size(v)?) },
            "stage2.voxel_size" => s2.voxel_size = parse_num(v)?,
            "stage2.tau" => s2.loss.tau = parse_num(v)?,
            "stage2.negatives" => s2.loss.negatives = parse_negatives(v)?,
            "stage2.negative_source" => {
                s2.negative_source = match v {
                    "points" => NegativeSource::PointsOnly,
                    "points+pixels" => NegativeSource::PointsAndPixels,
                    _ => return Err("expected points or points+pixels".into()),
                }
            }
            "stage2.lr" => s2.optim.lr0 = parse_num(v)?,
            "stage2.iterations" => s2.iterations = parse_num(v)?,
            "stage2.rotation" => cloud.rotation = parse_pair(v)?,
            "stage2.keep_prob" => cloud.keep = parse_num(v)?,
            "stage2.color_jitter" => cloud.jitter = parse_num(v)?,
            "stage2.embed_dim" => s2.embed_dim = parse_num(v)?,
            "stage2.head_dim" => s2.head_dim = parse_num(v)?,
            "stage2.k" => s2.k = parse_num(v)?,
            "optim.momentum" => {
                s1.optim.momentum = parse_num(v)?;
                s2.optim.momentum = s1.optim.momentum;
            }
            "optim.dampening" => {
                s1.optim.dampening = parse_num(v)?;
                s2.optim.dampening = s1.optim.dampening;
            }
            "optim.weight_decay" => {
                s1.optim.weight_decay = parse_num(v)?;
                s2.optim.weight_decay = s1.optim.weight_decay;
            }
            "optim.gamma" => {
                s1.optim.gamma = parse_num(v)?;
                s2.optim.gamma = s1.optim.gamma;
            }
            "optim.decay_every" => {
                s1.optim.decay_every = parse_num(v)?;
                s2.optim.decay_every = s1.optim.decay_every;
            }
            "probe.fractions" => self.probe.fractions = parse_list(v)?,
            "probe.seeds" => self.probe.seeds = parse_num(v)?,
            "probe.epochs" => self.probe.epochs = parse_num(v)?,
            "probe.lr" => self.probe.lr = parse_num(v)?,
            "probe.l2" => self.probe.l2 = parse_num(v)?,
            "probe.pool" => self.probe.pool = parse_num(v)?,
            "probe.test_scenes" => self.probe.test_scenes = parse_num(v)?,
            "tsne.perplexity" => self.tsne.perplexity = parse_num(v)?,
            "tsne.iterations" => self.tsne.iterations = parse_num(v)?,
            "tsne.learning_rate" => self.tsne.learning_rate = parse_num(v)?,
            "tsne.subsample_cap" => self.tsne.subsample_cap = parse_num(v)?,
            _ => return Err(format!("unhandled key {key}")),
        }
        s1.view_a = view.spec();
        s1.view_b = view.spec();
        s2.cloud_aug = cloud.spec();
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s1, s2, sc) = (&self.stage1, &self.stage2, &self.scene);
        let view = ViewParams::of(&s1.view_a);
        let cloud = CloudParams::of(&s2.cloud_aug);
        let size = |(w, h): (usize, usize)| format!("{w}x{h}");
        KEYS.iter()
            .map(|&(k, _)| {
                let v = match k {
                    "preset" => self.preset.to_string(),
                    "seed" => self.seed.to_string(),
                    "scene.room" => join(&sc.room),
                    "scene.num_objects" => sc.num_objects.to_string(),
                    "scene.object_classes" => sc.object_classes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
                    "scene.points" => sc.points.to_string(),
                    "scene.cameras" => sc.cameras.to_string(),
                    "scene.image_size" => size((sc.image_size.0 as usize, sc.image_size.1 as usize)),
                    "scene.fov_deg" => sc.fov_x.to_degrees().to_string(),
                    "scene.object_jitter" => sc.object_jitter.to_string(),
                    "scene.color_noise" => sc.color_noise.to_string(),
                    "stage1.batch_pairs" => s1.batch_pairs.to_string(),
                    "stage1.pixels_per_pair" => s1.pixels_per_pair.to_string(),
                    "stage1.tau" => s1.loss.tau.to_string(),
                    "stage1.negatives" => show_negatives(s1.loss.negatives),
                    "stage1.lr" => s1.optim.lr0.to_string(),
                    "stage1.iterations" => s1.iterations.to_string(),
                    "stage1.view_size" => size(view.size),
                    "stage1.crop_scale" => join(&[view.scale.0, view.scale.1]),
                    "stage1.flip_p" => view.flip.to_string(),
                    "stage1.color_jitter" => view.jitter.to_string(),
                    "stage1.grayscale_p" => view.gray.to_string(),
                    "stage1.embed_dim" => s1.embed_dim.to_string(),
                    "stage1.head_dim" => s1.head_dim.to_string(),
                    "stage2.batch_pairs" => s2.batch_pairs.to_string(),
                    "stage2.correspondences_per_pair" => s2.correspondences_per_pair.to_string(),
                    "stage2.crop" => s2.crop.map_or("none".into(), size),
                    "stage2.voxel_size" => s2.voxel_size.to_string(),
                    "stage2.tau" => s2.loss.tau.to_string(),
                    "stage2.negatives" => show_negatives(s2.loss.negatives),
                    "stage2.negative_source" => match s2.negative_source {
                        NegativeSource::PointsOnly => "points".into(),
                        NegativeSource::PointsAndPixels => "points+pixels".into(),
                    },
                    "stage2.lr" => s2.optim.lr0.to_string(),
                    "stage2.iterations" => s2.iterations.to_string(),
                    "stage2.rotation" => join(&[cloud.rotation.0, cloud.rotation.1]),
                    "stage2.keep_prob" => cloud.keep.to_string(),
                    "stage2.color_jitter" => cloud.jitter.to_string(),
                    "stage2.embed_dim" => s2.embed_dim.to_string(),
                    "stage2.head_dim" => s2.head_dim.to_string(),
                    "stage2.k" => s2.k.to_string(),
                    "optim.momentum" => s1.optim.momentum.to_string(),
                    "optim.dampening" => s1.optim.dampening.to_string(),
                    "optim.weight_decay" => s1.optim.weight_decay.to_string(),
                    "optim.gamma" => s1.optim.gamma.to_string(),
                    "optim.decay_every" => s1.optim.decay_every.to_string(),
                    "probe.fractions" => join(&self.probe.fractions),
                    "probe.seeds" => self.probe.seeds.to_string(),
                    "probe.epochs" => self.probe.epochs.to_string(),
                    "probe.lr" => self.probe.lr.to_string(),
                    "probe.l2" => self.probe.l2.to_string(),
                    "probe.pool" => self.probe.pool.to_string(),
                    "probe.test_scenes" => self.probe.test_scenes.to_string(),
                    "tsne.perplexity" => self.tsne.perplexity.to_string(),
                    "tsne.iterations" => self.tsne.iterations.to_string(),
                    "tsne.learning_rate" => self.tsne.learning_rate.to_string(),
                    "tsne.subsample_cap" => self.tsne.subsample_cap.to_string(),
                    _ => unreachable!("every key in KEYS is printed"),
                };
                (k, v)
            })
            .collect()
    }

    /// A complete config that parses back to `self`, with each key's description.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ((k, v), (_, doc)) in self.entries().into_iter().zip(KEYS) {
            writeln!(s, "# {doc}\n{k} = {v}").expect("write to String");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for cfg in [RunConfig::desk(), RunConfig::full()] {
            assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_key() {
        assert!(matches!(RunConfig::parse("stage1.nope = 3"), Err(ConfigError::UnknownKey { line: 1, .. })));
    }

    #[test]
    fn late_preset() {
        assert!(matches!(RunConfig::parse("seed = 1\npreset = full"), Err(ConfigError::LatePreset { line: 2 })));
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse("preset = desk\n# x\nseed = 9\nstage1.negatives = all\nstage2.crop = 32x24\n").unwrap();
        assert_eq!(c.stage1.seed, 9);
        assert_eq!(c.stage1.loss.negatives, NegativeCount::AllInBatch);
        assert_eq!(c.stage2.crop, Some((32, 24)));
    }

    #[test]
    fn full_values() {
        let c = RunConfig::full();
        assert_eq!((c.stage1.loss.tau, c.stage2.loss.tau), (0.4, 0.4));
        assert_eq!((c.stage1.optim.lr0, c.stage2.optim.lr0), (0.01, 0.1));
        let o = c.stage1.optim;
        assert_eq!((o.momentum, o.dampening, o.weight_decay, o.gamma), (0.9, 0.1, 0.004, 0.99));
        assert_eq!((c.stage1.batch_pairs, c.stage2.batch_pairs), (64, 8));
        assert_eq!(c.stage1.pixels_per_pair, 4092);
        assert_eq!(c.stage2.correspondences_per_pair, 2000);
        assert_eq!(c.stage2.crop, Some((224, 224)));
        assert_eq!(c.stage2.voxel_size, 0.05);
        assert_eq!((c.stage1.iterations, c.stage2.iterations), (20_000, 20_000));
    }
}
