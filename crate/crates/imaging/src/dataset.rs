//! Paired dataset construction and manifests.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{ImagingError, Result};
use crate::rng::{hash3, Stream};
use crate::scenes::procedural_scene;
use crate::synth::{degrade, SynthSpec, WeatherKind};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Test => "test",
        }
    }
}

/// One clean/degraded pair. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub clean_path: PathBuf,
    pub degraded_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<SynthSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<WeatherKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub counts: SplitCounts,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    root: PathBuf,
}

impl DatasetManifest {
    /// Directory that entry paths are relative to.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reads `manifest.json` from a dataset directory (or a direct file path)
    /// and checks the counts and referenced files.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let mut m: Self = serde_json::from_str(&fs::read_to_string(&file)?)?;
        if m.version != MANIFEST_VERSION {
            return Err(ImagingError::Ingest(format!(
                "{}: manifest version {} (supported: {MANIFEST_VERSION})",
                file.display(),
                m.version
            )));
        }
        m.root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self) -> Result<()> {
        fs::write(self.root.join(MANIFEST_FILE), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let counted = SplitCounts {
            train: self.split(Split::Train).count(),
            test: self.split(Split::Test).count(),
        };
        if counted != self.counts {
            return Err(ImagingError::Ingest(format!(
                "manifest counts {:?} disagree with entries {counted:?}",
                self.counts
            )));
        }
        for e in &self.entries {
            for p in [Some(&e.clean_path), Some(&e.degraded_path), e.mask_path.as_ref()].into_iter().flatten() {
                if !self.resolve(p).is_file() {
                    return Err(ImagingError::Ingest(format!("missing dataset file {}", self.resolve(p).display())));
                }
            }
        }
        Ok(())
    }

    /// Ingests an existing paired folder laid out as `{train,test}/{input,gt}/`
    /// with matching file names. Missing splits are skipped.
    pub fn from_pair_folder(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut entries = Vec::new();
        for split in [Split::Train, Split::Test] {
            let input_dir = root.join(split.dir_name()).join("input");
            if !input_dir.is_dir() {
                continue;
            }
            for input in list_images(&input_dir)? {
                let name = input.file_name().expect("listed files have names");
                let gt = root.join(split.dir_name()).join("gt").join(name);
                if !gt.is_file() {
                    return Err(ImagingError::Ingest(format!("no ground truth for {}", input.display())));
                }
                let rel = |p: &Path| p.strip_prefix(root).expect("inside root").to_path_buf();
                entries.push(ManifestEntry {
                    split,
                    clean_path: rel(&gt),
                    degraded_path: rel(&input),
                    mask_path: None,
                    spec: None,
                });
            }
        }
        if entries.is_empty() {
            return Err(ImagingError::Ingest(format!("no pairs under {}", root.display())));
        }
        let counts = SplitCounts {
            train: entries.iter().filter(|e| e.split == Split::Train).count(),
            test: entries.iter().filter(|e| e.split == Split::Test).count(),
        };
        Ok(Self { version: MANIFEST_VERSION, kind: None, master_seed: None, counts, entries, root: root.to_path_buf() })
    }
}

/// Image files (png/jpg/jpeg) in a directory, sorted by name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Writes `n` procedural clean scenes as `NNNNN.png`.
pub fn write_procedural_scenes(dir: impl AsRef<Path>, n: usize, h: usize, w: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let path = dir.join(format!("{i:05}.png"));
            procedural_scene(h, w, hash3(seed, i as u64, 0x5CE)).save_png(&path)?;
            Ok(path)
        })
        .collect()
}

fn kind_tag(kind: WeatherKind) -> u64 {
    match kind {
        WeatherKind::Snow => 0x53,
        WeatherKind::Rain => 0x52,
    }
}

/// Synthesizes `out_dir/{train,test}/{input,gt,mask}/NNNNN.png` and the
/// manifest from the first `n_train + n_test` images of `clean_dir`
/// (sorted by name). Every output byte is a function of the clean set and
/// `master_seed`.
pub fn build_dataset(
    clean_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    n_train: usize,
    n_test: usize,
    kind: WeatherKind,
    master_seed: u64,
) -> Result<DatasetManifest> {
    let (clean_dir, out_dir) = (clean_dir.as_ref(), out_dir.as_ref());
    let clean = list_images(clean_dir)?;
    if clean.len() < n_train + n_test {
        return Err(ImagingError::Ingest(format!(
            "{} holds {} images, need {}",
            clean_dir.display(),
            clean.len(),
            n_train + n_test
        )));
    }
    for split in ["train", "test"] {
        for sub in ["input", "gt", "mask"] {
            fs::create_dir_all(out_dir.join(split).join(sub))?;
        }
    }
    let jobs: Vec<(usize, Split, usize)> = (0..n_train)
        .map(|i| (i, Split::Train, i))
        .chain((0..n_test).map(|i| (n_train + i, Split::Test, i)))
        .collect();
    let entries = jobs
        .into_par_iter()
        .map(|(src, split, idx)| -> Result<ManifestEntry> {
            let mut stream = Stream::new(hash3(master_seed, src as u64, kind_tag(kind)));
            let spec = SynthSpec::sample(kind, &mut stream);
            let img = ImageBuffer::load(&clean[src])?.to_rgb().quantized();
            let (degraded, mask) = degrade(&img, &spec)?;
            let name = format!("{idx:05}.png");
            let rel = |sub: &str| PathBuf::from(split.dir_name()).join(sub).join(&name);
            img.save_png(out_dir.join(rel("gt")))?;
            degraded.save_png(out_dir.join(rel("input")))?;
            mask.save_png(out_dir.join(rel("mask")))?;
            Ok(ManifestEntry {
                split,
                clean_path: rel("gt"),
                degraded_path: rel("input"),
                mask_path: Some(rel("mask")),
                spec: Some(spec),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        kind: Some(kind),
        master_seed: Some(master_seed),
        counts: SplitCounts { train: n_train, test: n_test },
        entries,
        root: out_dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}
