//! Dataset directories: `manifest.json` plus one text file per scene.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pnal::noise::NoiseSpec;
use pnal::synth::SynthSpec;
use pnal::{Label, Scene};
use serde::{Deserialize, Serialize};

use crate::{core_failure, Failure};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub class_count: usize,
    /// Scene file names relative to the directory.
    pub scenes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
}

pub fn scene_name(i: usize) -> String {
    format!("scene_{i:03}.txt")
}

pub fn mask_name(scene_file: &str) -> String {
    match scene_file.strip_suffix(".txt") {
        Some(stem) => format!("{stem}.mask"),
        None => format!("{scene_file}.mask"),
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .map_err(Failure::Io)
            .with_context(|| format!("reading {}", path.display()))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Failure::Invalid(e.to_string()))
            .with_context(|| format!("parsing {}", path.display()))?;
        if manifest.scenes.is_empty() {
            return Err(Failure::Invalid("manifest lists no scenes".into()))
                .with_context(|| format!("reading {}", path.display()));
        }
        let scenes = manifest
            .scenes
            .iter()
            .map(|name| {
                let p = dir.join(name);
                Scene::read_path(&p, Some(manifest.class_count))
                    .map_err(core_failure)
                    .with_context(|| format!("reading scene {}", p.display()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            scenes,
        })
    }

    pub fn labels(&self) -> Result<Vec<Vec<Label>>> {
        self.scenes
            .iter()
            .zip(&self.manifest.scenes)
            .map(|(s, name)| {
                s.require_labels()
                    .map(<[Label]>::to_vec)
                    .map_err(core_failure)
                    .with_context(|| format!("scene {name}"))
            })
            .collect()
    }

    /// Replaced masks stored next to the scenes, if every scene has one.
    pub fn masks(&self) -> Result<Option<Vec<Vec<bool>>>> {
        let mut out = Vec::new();
        for (name, scene) in self.manifest.scenes.iter().zip(&self.scenes) {
            let path = self.dir.join(mask_name(name));
            if !path.exists() {
                return Ok(None);
            }
            let mask = read_mask(&path)?;
            if mask.len() != scene.len() {
                return Err(Failure::Invalid(format!("mask has {} entries for {} points", mask.len(), scene.len())))
                    .with_context(|| format!("reading {}", path.display()));
            }
            out.push(mask);
        }
        Ok(Some(out))
    }
}

/// Writes scenes and a manifest into `dir`, creating it.
pub fn write_dataset(dir: &Path, manifest: &Manifest, scenes: &[Scene], masks: Option<&[Vec<bool>]>) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(Failure::Io)
        .with_context(|| format!("creating {}", dir.display()))?;
    for (i, (name, scene)) in manifest.scenes.iter().zip(scenes).enumerate() {
        let path = dir.join(name);
        scene
            .write_path(&path)
            .map_err(core_failure)
            .with_context(|| format!("writing {}", path.display()))?;
        if let Some(masks) = masks {
            let text: String = masks[i].iter().map(|&m| if m { "1\n" } else { "0\n" }).collect();
            write_file(&dir.join(mask_name(name)), text.as_bytes())?;
        }
    }
    write_file(&dir.join(MANIFEST), json_bytes(manifest)?.as_slice())
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path)
        .map_err(Failure::Io)
        .with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Failure::Invalid(format!("line {}: `{other}` is not 0 or 1", i + 1)))
                .with_context(|| format!("reading {}", path.display())),
        })
        .collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)
        .map_err(Failure::Io)
        .with_context(|| format!("writing {}", path.display()))
}

/// Pretty JSON with a trailing newline.
pub fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}
