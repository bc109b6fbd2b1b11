//! Dataset ingestion: directory scan, PPM/PGM decoding, balancing and splitting.

mod image;
mod pnm;
pub mod synthetic;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::{self, streams};

pub use image::{luma, preprocess, GrayImage, RgbImage, MODEL_SIDE};
pub use pnm::{decode, encode_pgm, encode_ppm, load_image};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("class directory `{0}` is missing")]
    MissingClassDirectory(String),
    #[error("dataset contains no decodable images")]
    EmptyDataset,
    #[error("class {0} has no decodable images")]
    EmptyClass(ClassLabel),
    #[error("not a binary PPM/PGM file")]
    BadMagic,
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(usize),
    #[error("file is truncated")]
    TruncatedFile,
    #[error("malformed PNM header")]
    MalformedHeader,
    #[error("class {class} has {available} images, {requested} requested")]
    InsufficientClassCount {
        class: ClassLabel,
        available: usize,
        requested: usize,
    },
    #[error("split leaves an empty side for class {0}")]
    DegenerateSplit(ClassLabel),
    #[error("invalid split configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// The three engagement classes, in their fixed id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ClassLabel {
    Disengaged = 0,
    PartiallyEngaged = 1,
    Engaged = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [
        ClassLabel::Disengaged,
        ClassLabel::PartiallyEngaged,
        ClassLabel::Engaged,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    /// Directory name used in the dataset layout.
    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Disengaged => "disengaged",
            ClassLabel::PartiallyEngaged => "partially_engaged",
            ClassLabel::Engaged => "engaged",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id())
    }
}

impl From<ClassLabel> for u8 {
    fn from(c: ClassLabel) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for ClassLabel {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        ClassLabel::from_id(v as usize).ok_or_else(|| format!("invalid class id {v}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entry {
    /// Path relative to the manifest root, `/`-separated.
    pub path: String,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: String,
    pub counts: BTreeMap<String, usize>,
    pub checksum: String,
    #[serde(default)]
    pub skipped: usize,
    pub entries: Vec<Entry>,
}

impl DatasetManifest {
    pub fn from_entries(root: impl Into<String>, mut entries: Vec<Entry>, skipped: usize) -> Self {
        entries.sort();
        let mut counts: BTreeMap<String, usize> = ClassLabel::ALL
            .iter()
            .map(|c| (c.id().to_string(), 0))
            .collect();
        for e in &entries {
            *counts.get_mut(&e.label.id().to_string()).unwrap() += 1;
        }
        let checksum = list_checksum(&entries);
        Self {
            root: root.into(),
            counts,
            checksum,
            skipped,
            entries,
        }
    }

    pub fn count(&self, class: ClassLabel) -> usize {
        self.counts
            .get(&class.id().to_string())
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &Entry) -> PathBuf {
        Path::new(&self.root).join(&entry.path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, DatasetError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json()).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let s = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&s)
    }
}

fn list_checksum(entries: &[Entry]) -> String {
    let mut h = Sha256::new();
    for e in entries {
        h.update(e.path.as_bytes());
        h.update(b"\t");
        h.update([e.label as u8 + b'0']);
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |e| DatasetError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Walk `<root>/<class>/*.{ppm,pgm}` and record every decodable image.
/// Files that fail to decode are skipped and counted.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest, DatasetError> {
    let top: Vec<_> = std::fs::read_dir(root)
        .map_err(io_err(root))?
        .collect::<Result<_, _>>()
        .map_err(io_err(root))?;
    if top.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut entries = Vec::new();
    let mut skipped = 0;
    for class in ClassLabel::ALL {
        let dir = root.join(class.name());
        if !dir.is_dir() {
            return Err(DatasetError::MissingClassDirectory(
                class.name().to_string(),
            ));
        }
        let mut names: Vec<String> = Vec::new();
        for item in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let item = item.map_err(io_err(&dir))?;
            let path = item.path();
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if !matches!(ext.as_deref(), Some("ppm" | "pgm")) || !path.is_file() {
                continue;
            }
            match item.file_name().into_string() {
                Ok(n) => names.push(n),
                Err(_) => skipped += 1,
            }
        }
        names.sort();
        for name in names {
            match load_image(&dir.join(&name)) {
                Ok(_) => entries.push(Entry {
                    path: format!("{}/{}", class.name(), name),
                    label: class,
                }),
                Err(err) => {
                    log::warn!("skipping {}/{}: {}", class.name(), name, err);
                    skipped += 1;
                }
            }
        }
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let manifest =
        DatasetManifest::from_entries(root.to_string_lossy().into_owned(), entries, skipped);
    for class in ClassLabel::ALL {
        if manifest.count(class) == 0 {
            return Err(DatasetError::EmptyClass(class));
        }
    }
    Ok(manifest)
}

/// Equal-size per-class subset of a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedSet {
    pub per_class: usize,
    pub entries: Vec<Entry>,
}

impl BalancedSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Draw `balance_count` entries per class without replacement. `None` uses the
/// smallest class count.
pub fn balanced_sample(
    manifest: &DatasetManifest,
    seed: u64,
    balance_count: Option<usize>,
) -> Result<BalancedSet, DatasetError> {
    let min_count = ClassLabel::ALL
        .iter()
        .map(|&c| manifest.count(c))
        .min()
        .unwrap_or(0);
    let per_class = balance_count.unwrap_or(min_count);
    if per_class == 0 {
        return Err(DatasetError::EmptyDataset);
    }
    let mut rng = rng::stream(seed, streams::BALANCE);
    let mut entries = Vec::with_capacity(per_class * 3);
    for class in ClassLabel::ALL {
        let mut pool: Vec<&Entry> = manifest
            .entries
            .iter()
            .filter(|e| e.label == class)
            .collect();
        if pool.len() < per_class {
            return Err(DatasetError::InsufficientClassCount {
                class,
                available: pool.len(),
                requested: per_class,
            });
        }
        pool.sort();
        let (chosen, _) = pool.partial_shuffle(&mut rng, per_class);
        entries.extend(chosen.iter().map(|e| (*e).clone()));
    }
    entries.sort();
    Ok(BalancedSet { per_class, entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
    pub balance_count: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
            balance_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Entry>,
    pub test: Vec<Entry>,
}

/// Number of per-class training items for a given fraction. The epsilon keeps
/// products such as 0.8·5 from flooring to 3.
pub fn train_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Stratified split: per class, floor(fraction·n) to train and the rest to test.
pub fn split(set: &BalancedSet, cfg: &SplitConfig) -> Result<Split, DatasetError> {
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(DatasetError::InvalidConfig(format!(
            "train_fraction {} outside (0,1)",
            cfg.train_fraction
        )));
    }
    if set.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut rng = rng::stream(cfg.seed, streams::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in ClassLabel::ALL {
        let mut members: Vec<&Entry> = set.entries.iter().filter(|e| e.label == class).collect();
        members.sort();
        members.shuffle(&mut rng);
        let k = train_count(cfg.train_fraction, members.len());
        if k == 0 || k == members.len() {
            return Err(DatasetError::DegenerateSplit(class));
        }
        train.extend(members[..k].iter().map(|e| (*e).clone()));
        test.extend(members[k..].iter().map(|e| (*e).clone()));
    }
    train.sort();
    test.sort();
    Ok(Split { train, test })
}
