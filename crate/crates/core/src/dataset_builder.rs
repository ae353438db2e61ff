//! Cloud filtering, class balancing, stratified splits and manifests.
//!
//! Manifests are JSON Lines: a header object followed by one
//! [`ManifestEntry`] per line. Paths inside entries are relative to the
//! directory holding the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::maskgen::MaskMode;
use crate::osm_ingest::RoadClass;
use crate::rng;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("class {class} has {have} entries, {need} needed")]
    InsufficientClass {
        class: RoadClass,
        have: usize,
        need: usize,
    },
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: missing file {file}")]
    MissingFile {
        path: PathBuf,
        line: usize,
        file: PathBuf,
    },
    #[error("cannot split an empty entry list")]
    EmptySplit,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub tile_path: String,
    pub mask_path: Option<String>,
    pub class: RoadClass,
    pub country: String,
    pub road_id: String,
    pub center: GeoPoint,
    pub split: Split,
    pub mask_mode: MaskMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub created_utc: String,
    pub config_digest: String,
}

impl ManifestHeader {
    pub fn new(seed: u64, config_digest: impl Into<String>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            seed,
            created_utc: created_utc(),
            config_digest: config_digest.into(),
        }
    }
}

/// Wall-clock UTC, unless `SOURCE_DATE_EPOCH` pins it for reproducible output.
pub fn created_utc() -> String {
    let pinned = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0));
    pinned
        .unwrap_or_else(chrono::Utc::now)
        .format("%Y-%m-%dT%H:%M:%SZ")
        .to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: Option<ManifestHeader>,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against.
    pub base_dir: PathBuf,
    pub path: PathBuf,
}

impl Manifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Manifest line number of entry `i` (1-based, header is line 1).
    pub fn line_of(&self, i: usize) -> usize {
        i + 1 + usize::from(self.header.is_some())
    }

    pub fn with_split(&self, split: Split) -> Vec<ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect()
    }

    /// Checks that every referenced tile and mask exists.
    pub fn verify_files(&self) -> Result<(), DatasetError> {
        for (i, e) in self.entries.iter().enumerate() {
            for rel in std::iter::once(&e.tile_path).chain(e.mask_path.iter()) {
                let file = self.resolve(rel);
                if !file.is_file() {
                    return Err(DatasetError::MissingFile {
                        path: self.path.clone(),
                        line: self.line_of(i),
                        file,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn write_manifest(
    path: &Path,
    header: &ManifestHeader,
    entries: &[ManifestEntry],
) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
    write_json_line(&mut out, header).map_err(io)?;
    for e in entries {
        write_json_line(&mut out, e).map_err(io)?;
    }
    out.flush().map_err(io)
}

fn write_json_line<W: Write, T: Serialize>(out: &mut W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

pub fn read_manifest(path: &Path) -> Result<Manifest, DatasetError> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let schema = |line: usize, message: String| DatasetError::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut header = None;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if n == 1 {
            let h: ManifestHeader =
                serde_json::from_str(&line).map_err(|e| schema(n, format!("header: {e}")))?;
            if h.schema_version != MANIFEST_SCHEMA_VERSION {
                return Err(schema(
                    n,
                    format!(
                        "schema_version {} unsupported (expected {MANIFEST_SCHEMA_VERSION})",
                        h.schema_version
                    ),
                ));
            }
            header = Some(h);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(&line).map_err(|e| schema(n, e.to_string()))?;
        if e.tile_path.is_empty() {
            return Err(schema(n, "empty tile_path".into()));
        }
        entries.push(e);
    }
    Ok(Manifest {
        header,
        entries,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        path: path.to_path_buf(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CloudFilterConfig {
    pub brightness_threshold: u8,
    pub max_bright_fraction: f64,
}

impl Default for CloudFilterConfig {
    fn default() -> Self {
        Self {
            brightness_threshold: 200,
            max_bright_fraction: 0.4,
        }
    }
}

/// `true` to keep the tile: the share of pixels whose darkest channel is at
/// least `brightness_threshold` must not exceed `max_bright_fraction`.
pub fn cloud_filter(pixels: &[u8], cfg: &CloudFilterConfig) -> bool {
    let n = pixels.len() / 3;
    if n == 0 {
        return true;
    }
    let bright = pixels
        .chunks_exact(3)
        .filter(|p| p[0].min(p[1]).min(p[2]) >= cfg.brightness_threshold)
        .count();
    bright as f64 / n as f64 <= cfg.max_bright_fraction
}

pub trait Labeled {
    fn label(&self) -> RoadClass;
}

impl Labeled for ManifestEntry {
    fn label(&self) -> RoadClass {
        self.class
    }
}

fn by_class<T: Labeled>(items: &[T]) -> BTreeMap<RoadClass, Vec<usize>> {
    let mut groups: BTreeMap<RoadClass, Vec<usize>> =
        RoadClass::ALL.iter().map(|c| (*c, Vec::new())).collect();
    for (i, it) in items.iter().enumerate() {
        groups.entry(it.label()).or_default().push(i);
    }
    groups
}

/// Exactly `per_class` items of each class, drawn without replacement.
/// Survivors keep their input order.
pub fn balance<T: Labeled>(items: Vec<T>, per_class: usize, seed: u64) -> Result<Vec<T>, DatasetError> {
    let groups = by_class(&items);
    for (class, idx) in &groups {
        if idx.len() < per_class {
            return Err(DatasetError::InsufficientClass {
                class: *class,
                have: idx.len(),
                need: per_class,
            });
        }
    }
    let mut keep = vec![false; items.len()];
    for (class, idx) in &groups {
        let mut r = rng::stream(seed, &format!("balance/{class}"));
        for j in index::sample(&mut r, idx.len(), per_class) {
            keep[idx[j]] = true;
        }
    }
    Ok(items
        .into_iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(it))
        .collect())
}

/// `⌊n·ratio⌉`, halves rounded up.
pub fn test_count(n: usize, ratio: f64) -> usize {
    ((n as f64 * ratio) + 0.5).floor() as usize
}

/// Per-class test membership for `items` (true = test).
pub fn split_mask<T: Labeled>(items: &[T], test_ratio: f64, seed: u64) -> Vec<bool> {
    let mut is_test = vec![false; items.len()];
    for (class, mut idx) in by_class(items) {
        let mut r = rng::stream(seed, &format!("split/{class}"));
        idx.shuffle(&mut r);
        for &i in idx.iter().take(test_count(idx.len(), test_ratio)) {
            is_test[i] = true;
        }
    }
    is_test
}

/// Stratified split; both halves keep input order and carry their split tag.
pub fn split(
    entries: Vec<ManifestEntry>,
    test_ratio: f64,
    seed: u64,
) -> Result<(Vec<ManifestEntry>, Vec<ManifestEntry>), DatasetError> {
    if entries.is_empty() {
        return Err(DatasetError::EmptySplit);
    }
    let mask = split_mask(&entries, test_ratio, seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (mut e, t) in entries.into_iter().zip(mask) {
        if t {
            e.split = Split::Test;
            test.push(e);
        } else {
            e.split = Split::Train;
            train.push(e);
        }
    }
    Ok((train, test))
}
