//! Wiring between stages: workspace layout, tile and mask writing, and
//! loading manifests into model inputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_builder::{
    balance, cloud_filter, read_manifest, split, write_manifest, CloudFilterConfig, DatasetError, Labeled, Manifest,
    ManifestEntry, ManifestHeader, Split,
};
use crate::error::{Error, Result};
use crate::geo::PixelCoord;
use crate::imageio::{read_png, write_png, PixelFormat};
use crate::maskgen::{apply_mask, read_mask_png, road_mask_for_tile, write_mask_png, DilationConfig, Mask, MaskMode};
use crate::nn::Dataset;
use crate::osm_ingest::{RoadClass, RoadRecord};
use crate::raster_store::{Scene, TileGeometry};
use crate::osm_ingest::parse_roads;
use crate::raster_store::write_scene;
use crate::sampler::{min_separation_filter, sample_points, SamplePoint};
use crate::synth::{generate_scene, SynthConfig};

/// Fixed directory layout under a workspace root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }
    pub fn roads(&self) -> PathBuf {
        self.root.join("roads")
    }
    pub fn scenes(&self) -> PathBuf {
        self.root.join("scenes")
    }
    pub fn tiles(&self) -> PathBuf {
        self.root.join("tiles")
    }
    pub fn masks(&self) -> PathBuf {
        self.root.join("masks")
    }
    pub fn manifests(&self) -> PathBuf {
        self.root.join("manifests")
    }
    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
    pub fn logs(&self) -> PathBuf {
        self.root.join("logs")
    }
    pub fn manifest(&self, name: &str) -> PathBuf {
        self.manifests().join(format!("{name}.jsonl"))
    }

    pub fn create(&self) -> Result<()> {
        for d in [
            self.roads(),
            self.scenes(),
            self.tiles(),
            self.masks(),
            self.manifests(),
            self.models(),
            self.reports(),
            self.logs(),
        ] {
            fs::create_dir_all(&d).map_err(Error::io(&d))?;
        }
        Ok(())
    }
}

/// Digest and seed stamped into every artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_digest: String,
    pub seed: u64,
}

impl Provenance {
    pub fn text(&self) -> [(String, String); 2] {
        [
            ("config_digest".into(), self.config_digest.clone()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

fn text_refs(t: &[(String, String); 2]) -> [(&str, &str); 2] {
    [(&t[0].0, &t[0].1), (&t[1].0, &t[1].1)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildConfig {
    pub tile_size: usize,
    pub spacing_m: f64,
    pub min_separation_m: f64,
    pub cloud: CloudFilterConfig,
    /// Entries kept per class; `None` keeps the size of the smallest class.
    pub per_class: Option<usize>,
    pub test_ratio: f64,
    pub radii: DilationConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            tile_size: 128,
            spacing_m: crate::sampler::DEFAULT_SPACING_M,
            min_separation_m: 0.0,
            cloud: CloudFilterConfig::default(),
            per_class: None,
            test_ratio: 0.1,
            radii: DilationConfig::default(),
        }
    }
}

/// Samples every road, then thins the union of points.
pub fn sample_roads(roads: &[RoadRecord], spacing_m: f64, min_separation_m: f64) -> Vec<SamplePoint> {
    let all: Vec<SamplePoint> = roads.iter().flat_map(|r| sample_points(r, spacing_m)).collect();
    min_separation_filter(all, min_separation_m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sample: SamplePoint,
    pub scene: usize,
    pub top_left: PixelCoord,
}

impl Labeled for Candidate {
    fn label(&self) -> RoadClass {
        self.sample.class
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub samples: usize,
    pub outside_scenes: usize,
    pub cloudy: usize,
    pub kept: usize,
}

/// First scene (in order) that holds a whole tile around `sample`.
pub fn locate(scenes: &[Scene], sample: &SamplePoint, tile_size: usize) -> Option<(usize, PixelCoord)> {
    scenes
        .iter()
        .enumerate()
        .find_map(|(i, s)| s.tile_origin(sample.point, tile_size).ok().map(|tl| (i, tl)))
}

pub fn find_candidates(
    scenes: &[Scene],
    samples: &[SamplePoint],
    tile_size: usize,
    cloud: &CloudFilterConfig,
) -> (Vec<Candidate>, CandidateStats) {
    let found: Vec<Option<std::result::Result<Candidate, ()>>> = samples
        .par_iter()
        .map(|s| {
            let (scene, top_left) = locate(scenes, s, tile_size)?;
            let px = scenes[scene].read_window(top_left, tile_size).ok()?;
            Some(if cloud_filter(&px, cloud) {
                Ok(Candidate { sample: s.clone(), scene, top_left })
            } else {
                Err(())
            })
        })
        .collect();
    let mut stats = CandidateStats { samples: samples.len(), ..Default::default() };
    let mut out = Vec::new();
    for f in found {
        match f {
            None => stats.outside_scenes += 1,
            Some(Err(())) => stats.cloudy += 1,
            Some(Ok(c)) => out.push(c),
        }
    }
    stats.kept = out.len();
    (out, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub manifest: PathBuf,
    pub candidates: CandidateStats,
    pub per_class: usize,
    pub train: usize,
    pub test: usize,
}

/// Balances candidates, splits them, writes tile PNGs and the manifest
/// `manifests/{name}.jsonl`.
pub fn build_dataset(
    ws: &Workspace,
    name: &str,
    scenes: &[Scene],
    samples: &[SamplePoint],
    cfg: &BuildConfig,
    prov: &Provenance,
) -> Result<BuildReport> {
    ws.create()?;
    let (cands, stats) = find_candidates(scenes, samples, cfg.tile_size, &cfg.cloud);
    let smallest = RoadClass::ALL
        .iter()
        .map(|c| cands.iter().filter(|x| x.sample.class == *c).count())
        .min()
        .unwrap_or(0);
    let per_class = cfg.per_class.unwrap_or(smallest);
    let chosen = balance(cands, per_class, prov.seed)?;
    let text = prov.text();
    let entries: Vec<ManifestEntry> = chosen
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            let scene = &scenes[c.scene];
            let file = format!("{name}_{k:05}.png");
            let px = scene.read_window(c.top_left, cfg.tile_size)?;
            write_png(&ws.tiles().join(&file), cfg.tile_size, cfg.tile_size, PixelFormat::Rgb8, &px, &text_refs(&text))?;
            Ok(ManifestEntry {
                tile_path: format!("../tiles/{file}"),
                mask_path: None,
                class: c.sample.class,
                country: scene.country.clone(),
                road_id: c.sample.road_id.clone(),
                center: c.sample.point,
                split: Split::None,
                mask_mode: MaskMode::None,
            })
        })
        .collect::<Result<_>>()?;
    let (train, test) = split(entries, cfg.test_ratio, prov.seed)?;
    let (n_train, n_test) = (train.len(), test.len());
    let all: Vec<ManifestEntry> = train.into_iter().chain(test).collect();
    let path = ws.manifest(name);
    let header = ManifestHeader::new(prov.seed, prov.config_digest.clone());
    write_manifest(&path, &header, &all)?;
    Ok(BuildReport {
        manifest: path,
        candidates: stats,
        per_class,
        train: n_train,
        test: n_test,
    })
}

fn road_bbox(r: &RoadRecord) -> [f64; 4] {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in r.polyline.points() {
        b = [b[0].min(p.lon), b[1].min(p.lat), b[2].max(p.lon), b[3].max(p.lat)];
    }
    b
}

/// Roads whose bounding box, grown by `margin_m`, meets the tile.
pub fn roads_near<'a>(roads: &'a [RoadRecord], boxes: &[[f64; 4]], g: &TileGeometry, margin_m: f64) -> Vec<&'a RoadRecord> {
    let t = g.transform;
    let side = g.size as f64 * t.gsd;
    let lo = g.frame.unproject(crate::geo::MeterPoint::new(t.origin_x - margin_m, t.origin_y - side - margin_m));
    let hi = g.frame.unproject(crate::geo::MeterPoint::new(t.origin_x + side + margin_m, t.origin_y + margin_m));
    roads
        .iter()
        .zip(boxes)
        .filter(|(_, b)| b[0] <= hi.lon && b[2] >= lo.lon && b[1] <= hi.lat && b[3] >= lo.lat)
        .map(|(r, _)| r)
        .collect()
}

/// Computes and writes a road mask for every manifest entry, then rewrites
/// the manifest with `mask_path` filled in.
pub fn write_masks(
    ws: &Workspace,
    manifest: &Manifest,
    scenes: &[Scene],
    roads: &[RoadRecord],
    cfg: &BuildConfig,
    prov: &Provenance,
) -> Result<Manifest> {
    ws.create()?;
    let boxes: Vec<[f64; 4]> = roads.iter().map(road_bbox).collect();
    let text = prov.text();
    let entries: Vec<ManifestEntry> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let sample = SamplePoint { point: e.center, road_id: e.road_id.clone(), class: e.class, chainage: 0.0 };
            let (si, tl) = locate(scenes, &sample, cfg.tile_size).ok_or_else(|| {
                Error::Dataset(DatasetError::Schema {
                    path: manifest.path.clone(),
                    line: manifest.line_of(i),
                    message: "tile center is not inside any scene".into(),
                })
            })?;
            let g = scenes[si].tile_geometry(tl, cfg.tile_size);
            let near = roads_near(roads, &boxes, &g, 1.0);
            let mask = road_mask_for_tile(&near, &g, &cfg.radii);
            let stem = Path::new(&e.tile_path).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| format!("{i:05}.png"));
            write_mask_png(&ws.masks().join(&stem), &mask, &text_refs(&text))?;
            Ok(ManifestEntry { mask_path: Some(format!("../masks/{stem}")), ..e.clone() })
        })
        .collect::<Result<_>>()?;
    let header = manifest.header.clone().unwrap_or_else(|| ManifestHeader::new(prov.seed, prov.config_digest.clone()));
    write_manifest(&manifest.path, &header, &entries)?;
    Ok(Manifest { entries, header: Some(header), ..manifest.clone() })
}

/// Reads an RGB tile and, when needed, its mask, checking both exist.
pub fn read_tile(manifest: &Manifest, i: usize, mode: MaskMode) -> Result<(Vec<u8>, usize, Option<Mask>)> {
    let e = &manifest.entries[i];
    let missing = |file: PathBuf| {
        Error::Dataset(DatasetError::MissingFile { path: manifest.path.clone(), line: manifest.line_of(i), file })
    };
    let tile_path = manifest.resolve(&e.tile_path);
    if !tile_path.is_file() {
        return Err(missing(tile_path));
    }
    let img = read_png(&tile_path)?;
    if img.format != PixelFormat::Rgb8 || img.width != img.height {
        return Err(Error::Dataset(DatasetError::Schema {
            path: manifest.path.clone(),
            line: manifest.line_of(i),
            message: format!("{} is not a square RGB tile", tile_path.display()),
        }));
    }
    let mask = match (&e.mask_path, mode) {
        (_, MaskMode::None) => None,
        (None, _) => {
            return Err(Error::Dataset(DatasetError::Schema {
                path: manifest.path.clone(),
                line: manifest.line_of(i),
                message: format!("mask mode {} needs a mask_path", mode.as_str()),
            }))
        }
        (Some(m), _) => {
            let p = manifest.resolve(m);
            if !p.is_file() {
                return Err(missing(p));
            }
            Some(read_mask_png(&p)?)
        }
    };
    let size = img.width;
    let px = match &mask {
        Some(m) => apply_mask(&img.data, size, m, mode)?,
        None => img.data,
    };
    Ok((px, size, mask))
}

/// Interleaved RGB bytes to planar `[3, input, input]` floats in `[0, 1]`,
/// area-averaging when `size` is a multiple of `input`.
pub fn tile_to_input(pixels: &[u8], size: usize, input: usize) -> Result<Vec<f32>> {
    if input == 0 || size % input != 0 {
        return Err(Error::Config(format!("tile size {size} is not a multiple of model input {input}")));
    }
    let f = size / input;
    let norm = 1.0 / (255.0 * (f * f) as f32);
    let mut out = vec![0.0f32; 3 * input * input];
    for oy in 0..input {
        for ox in 0..input {
            let mut acc = [0u32; 3];
            for y in oy * f..(oy + 1) * f {
                for x in ox * f..(ox + 1) * f {
                    let p = (y * size + x) * 3;
                    for c in 0..3 {
                        acc[c] += pixels[p + c] as u32;
                    }
                }
            }
            for c in 0..3 {
                out[(c * input + oy) * input + ox] = acc[c] as f32 * norm;
            }
        }
    }
    Ok(out)
}

pub fn load_input(manifest: &Manifest, i: usize, mode: MaskMode, input: usize) -> Result<Vec<f32>> {
    let (px, size, _) = read_tile(manifest, i, mode)?;
    tile_to_input(&px, size, input)
}

/// Indices of entries in `split`, in manifest order.
pub fn split_indices(manifest: &Manifest, split: Split) -> Vec<usize> {
    (0..manifest.entries.len()).filter(|&i| manifest.entries[i].split == split).collect()
}

/// Loads the given entries, masked per `mode`, as a training set.
pub fn load_dataset(manifest: &Manifest, indices: &[usize], mode: MaskMode, input: usize) -> Result<Dataset> {
    let inputs: Vec<Vec<f32>> = indices
        .par_iter()
        .map(|&i| load_input(manifest, i, mode, input))
        .collect::<Result<_>>()?;
    let mut d = Dataset::new(3 * input * input);
    for (x, &i) in inputs.iter().zip(indices) {
        d.push(x, manifest.entries[i].class.index());
    }
    Ok(d)
}

/// Generates a synthetic scene and turns it into a masked dataset:
/// scene, GeoJSON roads, tiles, masks and `manifests/{name}.jsonl`.
/// Tile size, radii and sample spacing come from `synth`; the rest of
/// `cfg` applies unchanged.
pub fn build_synth_corpus(
    ws: &Workspace,
    name: &str,
    synth: &SynthConfig,
    cfg: &BuildConfig,
    prov: &Provenance,
) -> Result<(Manifest, BuildReport)> {
    ws.create()?;
    let cfg = &BuildConfig {
        tile_size: synth.tile_size,
        radii: synth.radii,
        spacing_m: synth.sample_spacing_m,
        min_separation_m: synth.sample_min_separation_m,
        ..cfg.clone()
    };
    let generated = generate_scene(synth)?;
    let scene = &generated.scene;
    write_scene(&ws.scenes().join(&scene.id), scene)?;
    let geojson = ws.roads().join(format!("{}.geojson", scene.id));
    fs::write(&geojson, generated.geojson()).map_err(Error::io(&geojson))?;
    let roads = parse_roads(&generated.geojson())?.records;
    let samples = sample_roads(&roads, cfg.spacing_m, cfg.min_separation_m);
    let scenes = std::slice::from_ref(scene);
    let report = build_dataset(ws, name, scenes, &samples, cfg, prov)?;
    let manifest = read_manifest(&report.manifest)?;
    let manifest = write_masks(ws, &manifest, scenes, &roads, cfg, prov)?;
    Ok((manifest, report))
}
