use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use xmodal_core::synthdata::{read_scene, SyntheticScene};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const HEADER: &str = "index,directory,seed";

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub index: usize,
    pub directory: String,
    pub seed: u64,
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:03}")
}

pub fn to_csv(entries: &[Entry]) -> String {
    let mut s = format!("{HEADER}\n");
    for e in entries {
        s.push_str(&format!("{},{},{}\n", e.index, e.directory, e.seed));
    }
    s
}

pub fn read(data: &Path) -> Result<Vec<Entry>> {
    let path = data.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        bail!("{}: expected header `{HEADER}`", path.display());
    }
    lines
        .enumerate()
        .map(|(n, line)| {
            let bad = || format!("{} line {}: expected index,directory,seed", path.display(), n + 2);
            let f: Vec<&str> = line.split(',').collect();
            let [i, d, s] = f[..] else { bail!(bad()) };
            Ok(Entry { index: i.parse().with_context(bad)?, directory: d.to_string(), seed: s.parse().with_context(bad)? })
        })
        .collect()
}

pub fn scene_dirs(data: &Path) -> Result<Vec<PathBuf>> {
    Ok(read(data)?.into_iter().map(|e| data.join(e.directory)).collect())
}

pub fn load_scenes(data: &Path) -> Result<Vec<SyntheticScene>> {
    scene_dirs(data)?
        .iter()
        .map(|d| read_scene(d).with_context(|| format!("reading scene {}", d.display())))
        .collect()
}
