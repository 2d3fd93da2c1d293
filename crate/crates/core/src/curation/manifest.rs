use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::media::{read_frames, read_png};
use super::toy::MotionFamily;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Real,
    Synthetic,
}

/// Frame directories of the per-frame control maps and the background plate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlLocators {
    pub body: PathBuf,
    pub face: PathBuf,
    pub normal: PathBuf,
    pub mask: PathBuf,
    /// A single image.
    pub background: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema: u32,
    pub id: String,
    pub domain: Domain,
    /// Directory of numbered video frames.
    pub locator: PathBuf,
    pub frame_count: usize,
    pub height: usize,
    pub width: usize,
    pub controls: ControlLocators,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion: Option<MotionFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// A decoded video with its aligned control maps, each `[F, 3, H, W]`
/// except the `[3, H, W]` background.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub frames: Tensor,
    pub body: Tensor,
    pub face: Tensor,
    pub normal: Tensor,
    pub mask: Tensor,
    pub background: Tensor,
}

impl VideoSample {
    pub fn frame_count(&self) -> usize {
        self.frames.dim(0)
    }

    /// Frames `[start, start + len)` of every per-frame tensor.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            frames: self.frames.narrow(0, start, len)?,
            body: self.body.narrow(0, start, len)?,
            face: self.face.narrow(0, start, len)?,
            normal: self.normal.narrow(0, start, len)?,
            mask: self.mask.narrow(0, start, len)?,
            background: self.background.clone(),
        })
    }

    /// The background plate repeated for each frame.
    pub fn background_video(&self) -> Tensor {
        let f = self.frame_count();
        let one = self.background.clone();
        let (h, w) = (one.dim(1), one.dim(2));
        let one = one.reshape(&[1, 3, h, w]).expect("background shape");
        Tensor::concat(&vec![&one; f], 0).expect("background repeat")
    }
}

impl ManifestEntry {
    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::Manifest(format!(
                "entry `{}` has schema {} (expected {MANIFEST_SCHEMA})",
                self.id, self.schema
            )));
        }
        if self.id.is_empty() {
            return Err(Error::Manifest("entry with empty id".into()));
        }
        if self.frame_count == 0 {
            return Err(Error::Manifest(format!("entry `{}` has no frames", self.id)));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Manifest(format!("entry `{}` has an empty frame size", self.id)));
        }
        Ok(())
    }

    fn paths_mut(&mut self) -> [&mut PathBuf; 6] {
        let c = &mut self.controls;
        [
            &mut self.locator,
            &mut c.body,
            &mut c.face,
            &mut c.normal,
            &mut c.mask,
            &mut c.background,
        ]
    }

    pub fn load(&self) -> Result<VideoSample> {
        let f = self.frame_count;
        let read = |dir: &Path| -> Result<Tensor> {
            let v = read_frames(dir, f)?;
            v.ensure_shape(&[f, 3, self.height, self.width])?;
            Ok(v)
        };
        let load = || -> Result<VideoSample> {
            let background = read_png(&self.controls.background)?;
            background.ensure_shape(&[3, self.height, self.width])?;
            Ok(VideoSample {
                frames: read(&self.locator)?,
                body: read(&self.controls.body)?,
                face: read(&self.controls.face)?,
                normal: read(&self.controls.normal)?,
                mask: read(&self.controls.mask)?,
                background,
            })
        };
        load().map_err(|e| Error::Manifest(format!("cannot load entry `{}`: {e}", self.id)))
    }
}

/// An ordered list of entries; stored as JSONL with one entry per line.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn count_domain(&self, domain: Domain) -> usize {
        self.entries.iter().filter(|e| e.domain == domain).count()
    }

    /// Entries must be individually valid and have distinct ids.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            e.validate()?;
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate id `{}`", e.id)));
            }
        }
        Ok(())
    }

    /// Serialises with locators relative to `base` where possible.
    pub fn to_jsonl(&self, base: &Path) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            let mut e = e.clone();
            for p in e.paths_mut() {
                if let Ok(rel) = p.strip_prefix(base) {
                    *p = rel.to_path_buf();
                }
            }
            out.push_str(&serde_json::to_string(&e)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses JSONL, resolving relative locators against `base`.
    pub fn from_jsonl(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: ManifestEntry = serde_json::from_str(line)
                .map_err(|err| Error::Manifest(format!("line {}: {err}", i + 1)))?;
            for p in e.paths_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            entries.push(e);
        }
        Self::new(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        if !base.as_os_str().is_empty() {
            fs::create_dir_all(base).map_err(|e| Error::io(base, e))?;
        }
        fs::write(path, self.to_jsonl(base)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text, path.parent().unwrap_or(Path::new("")))
    }
}
