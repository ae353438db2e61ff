//! Scene container and tile extraction.
//!
//! A scene is a directory holding `scene.json` plus a headerless pixel file
//! of row-major interleaved 8-bit RGB. The local frame is anchored at the
//! geographic position of the top-left pixel corner, so the scene transform
//! always has `origin_x = origin_y = 0`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint, GeoTransform, LocalFrame, PixelCoord, DEFAULT_GSD, M_PER_DEG_LAT};

pub const SCENE_METADATA: &str = "scene.json";
pub const DEFAULT_TILE_SIZE: usize = 1000;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("missing scene metadata {path}: {reason}")]
    MissingMetadata { path: PathBuf, reason: String },
    #[error("{path}: declared {expected} pixel bytes, found {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: rotated or sheared geotransforms are not supported")]
    RotatedTransform { path: PathBuf },
    #[error("{path}: pixel digest mismatch (expected {expected}, found {actual})")]
    DigestMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("window {size}x{size} at ({col}, {row}) exceeds {width}x{height} scene")]
    OutOfBounds {
        col: i64,
        row: i64,
        size: usize,
        width: usize,
        height: usize,
    },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// `scene.json` contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetadata {
    pub width: usize,
    pub height: usize,
    pub gsd_m: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
    pub frame_m_per_deg_lat: f64,
    pub country: String,
    pub pixel_file: String,
    pub pixel_sha256: String,
    /// Only zero is accepted.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub rotation_deg: f64,
    /// Only zero is accepted.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shear_deg: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub frame: LocalFrame,
    pub country: String,
    pub pixels: Vec<u8>,
}

impl Scene {
    /// Builds an in-memory scene whose top-left corner sits at `origin`.
    pub fn new(
        id: impl Into<String>,
        width: usize,
        height: usize,
        origin: GeoPoint,
        gsd: f64,
        country: impl Into<String>,
        pixels: Vec<u8>,
    ) -> Result<Self, SceneError> {
        let id = id.into();
        if pixels.len() != width * height * 3 {
            return Err(SceneError::SizeMismatch {
                path: PathBuf::from(&id),
                expected: width * height * 3,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            id,
            width,
            height,
            transform: GeoTransform::new(0.0, 0.0, gsd)?,
            frame: LocalFrame::new(origin)?,
            country: country.into(),
            pixels,
        })
    }

    pub fn gsd(&self) -> f64 {
        self.transform.gsd
    }

    pub fn metadata(&self, pixel_file: &str) -> SceneMetadata {
        let o = self.frame.origin();
        SceneMetadata {
            width: self.width,
            height: self.height,
            gsd_m: self.transform.gsd,
            origin_lon: o.lon,
            origin_lat: o.lat,
            frame_m_per_deg_lat: self.frame.m_per_deg_lat(),
            country: self.country.clone(),
            pixel_file: pixel_file.to_string(),
            pixel_sha256: hex::encode(Sha256::digest(&self.pixels)),
            rotation_deg: 0.0,
            shear_deg: 0.0,
        }
    }

    /// Geographic position of the center of pixel `pc`.
    pub fn pixel_center(&self, pc: PixelCoord) -> GeoPoint {
        self.frame.unproject(self.transform.pixel_to_geo(pc))
    }

    /// Copies the `size`-square window whose top-left pixel is `top_left`.
    pub fn read_window(&self, top_left: PixelCoord, size: usize) -> Result<Vec<u8>, SceneError> {
        self.read_rect(top_left, size, size)
    }

    pub fn read_rect(&self, top_left: PixelCoord, w: usize, h: usize) -> Result<Vec<u8>, SceneError> {
        if top_left.col + w > self.width || top_left.row + h > self.height {
            return Err(SceneError::OutOfBounds {
                col: top_left.col as i64,
                row: top_left.row as i64,
                size: w.max(h),
                width: self.width,
                height: self.height,
            });
        }
        let mut out = Vec::with_capacity(w * h * 3);
        for row in top_left.row..top_left.row + h {
            let start = (row * self.width + top_left.col) * 3;
            out.extend_from_slice(&self.pixels[start..start + w * 3]);
        }
        Ok(out)
    }

    /// Where a `size` tile centered on `center` would start, or `OutOfBounds`.
    pub fn tile_origin(&self, center: GeoPoint, size: usize) -> Result<PixelCoord, SceneError> {
        let m = self.frame.project(center)?;
        let (col, row) = self.transform.to_pixel_signed(m);
        let half = (size / 2) as i64;
        let (c0, r0) = (col - half, row - half);
        if c0 < 0
            || r0 < 0
            || c0 + size as i64 > self.width as i64
            || r0 + size as i64 > self.height as i64
        {
            return Err(SceneError::OutOfBounds {
                col: c0,
                row: r0,
                size,
                width: self.width,
                height: self.height,
            });
        }
        Ok(PixelCoord::new(c0 as usize, r0 as usize))
    }

    /// Extracts a tile centered on `center`; tiles touching the scene edge are rejected.
    pub fn extract_tile(
        &self,
        center: GeoPoint,
        size: usize,
        road_id: &str,
    ) -> Result<Tile, SceneError> {
        let top_left = self.tile_origin(center, size)?;
        Ok(Tile {
            size,
            pixels: self.read_window(top_left, size)?,
            center,
            scene_id: self.id.clone(),
            road_id: road_id.to_string(),
            geometry: self.tile_geometry(top_left, size),
        })
    }

    pub fn tile_geometry(&self, top_left: PixelCoord, size: usize) -> TileGeometry {
        TileGeometry {
            transform: self.transform.window(top_left),
            frame: self.frame,
            top_left,
            size,
        }
    }
}

/// Placement of a tile within its scene's frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGeometry {
    pub transform: GeoTransform,
    pub frame: LocalFrame,
    pub top_left: PixelCoord,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub size: usize,
    pub pixels: Vec<u8>,
    pub center: GeoPoint,
    pub scene_id: String,
    pub road_id: String,
    pub geometry: TileGeometry,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads and validates a scene directory.
pub fn open_scene(dir: &Path) -> Result<Scene, SceneError> {
    let meta_path = dir.join(SCENE_METADATA);
    let text = fs::read_to_string(&meta_path).map_err(|e| SceneError::MissingMetadata {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;
    let meta: SceneMetadata =
        serde_json::from_str(&text).map_err(|e| SceneError::MissingMetadata {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
    if meta.rotation_deg != 0.0 || meta.shear_deg != 0.0 {
        return Err(SceneError::RotatedTransform { path: meta_path });
    }
    let pixel_path = dir.join(&meta.pixel_file);
    let pixels = fs::read(&pixel_path).map_err(io_err(&pixel_path))?;
    let expected = meta.width * meta.height * 3;
    if pixels.len() != expected {
        return Err(SceneError::SizeMismatch {
            path: pixel_path,
            expected,
            actual: pixels.len(),
        });
    }
    let actual = hex::encode(Sha256::digest(&pixels));
    if !actual.eq_ignore_ascii_case(&meta.pixel_sha256) {
        return Err(SceneError::DigestMismatch {
            path: pixel_path,
            expected: meta.pixel_sha256,
            actual,
        });
    }
    let origin = GeoPoint::new(meta.origin_lon, meta.origin_lat)?;
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".to_string());
    Ok(Scene {
        id,
        width: meta.width,
        height: meta.height,
        transform: GeoTransform::new(0.0, 0.0, meta.gsd_m)?,
        frame: LocalFrame::with_scale(origin, meta.frame_m_per_deg_lat)?,
        country: meta.country,
        pixels,
    })
}

/// Writes `scene.json` and `pixels.rgb` into `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let pixel_file = "pixels.rgb";
    let pixel_path = dir.join(pixel_file);
    fs::write(&pixel_path, &scene.pixels).map_err(io_err(&pixel_path))?;
    let meta_path = dir.join(SCENE_METADATA);
    let mut text = serde_json::to_string_pretty(&scene.metadata(pixel_file))
        .expect("scene metadata serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(io_err(&meta_path))
}

/// Opens every scene directory under `root`, sorted by name.
pub fn open_scene_dir(root: &Path) -> Result<Vec<Scene>, SceneError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(SCENE_METADATA).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| open_scene(d)).collect()
}

impl Default for SceneMetadata {
    fn default() -> Self {
        Self {
            width: 0,
            height: 0,
            gsd_m: DEFAULT_GSD,
            origin_lon: 0.0,
            origin_lat: 0.0,
            frame_m_per_deg_lat: M_PER_DEG_LAT,
            country: String::new(),
            pixel_file: "pixels.rgb".into(),
            pixel_sha256: String::new(),
            rotation_deg: 0.0,
            shear_deg: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_scene(w: usize, h: usize, gsd: f64) -> Scene {
        let pixels = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
        Scene::new("s", w, h, GeoPoint::new(36.8, -1.3).unwrap(), gsd, "KE", pixels).unwrap()
    }

    fn write_raw(dir: &Path, meta: &SceneMetadata, blob: &[u8]) {
        fs::write(dir.join(&meta.pixel_file), blob).unwrap();
        fs::write(dir.join(SCENE_METADATA), serde_json::to_string(meta).unwrap()).unwrap();
    }

    fn meta_for(w: usize, h: usize, blob: &[u8]) -> SceneMetadata {
        SceneMetadata {
            width: w,
            height: h,
            country: "KE".into(),
            pixel_sha256: hex::encode(Sha256::digest(blob)),
            ..Default::default()
        }
    }

    #[test]
    fn open_minimal_scene() {
        let dir = tempfile::tempdir().unwrap();
        let blob = [7u8; 12];
        write_raw(dir.path(), &meta_for(2, 2, &blob), &blob);
        let s = open_scene(dir.path()).unwrap();
        assert_eq!((s.width, s.height), (2, 2));
        assert_eq!(s.gsd(), 0.3);
    }

    #[test]
    fn short_blob_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let blob = [7u8; 11];
        write_raw(dir.path(), &meta_for(2, 2, &blob), &blob);
        assert!(matches!(
            open_scene(dir.path()),
            Err(SceneError::SizeMismatch { expected: 12, actual: 11, .. })
        ));
    }

    #[test]
    fn gsd_override_and_rotation_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let blob = [1u8; 12];
        let mut meta = meta_for(2, 2, &blob);
        meta.gsd_m = 0.5;
        write_raw(dir.path(), &meta, &blob);
        assert_eq!(open_scene(dir.path()).unwrap().gsd(), 0.5);

        meta.rotation_deg = 3.0;
        write_raw(dir.path(), &meta, &blob);
        assert!(matches!(
            open_scene(dir.path()),
            Err(SceneError::RotatedTransform { .. })
        ));
    }

    #[test]
    fn missing_metadata_and_corrupt_blob() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            open_scene(dir.path()),
            Err(SceneError::MissingMetadata { .. })
        ));
        let blob = [1u8; 12];
        let meta = meta_for(2, 2, &blob);
        write_raw(dir.path(), &meta, &[2u8; 12]);
        assert!(matches!(
            open_scene(dir.path()),
            Err(SceneError::DigestMismatch { .. })
        ));
    }

    #[test]
    fn write_then_open_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let s = ramp_scene(5, 3, 0.3);
        let sub = dir.path().join("s");
        write_scene(&sub, &s).unwrap();
        assert_eq!(open_scene(&sub).unwrap(), s);
    }

    #[test]
    fn window_examples() {
        let s = ramp_scene(4, 4, 0.3);
        assert_eq!(s.read_window(PixelCoord::new(0, 0), 4).unwrap(), s.pixels);
        assert_eq!(s.read_window(PixelCoord::new(0, 0), 1).unwrap(), s.pixels[..3]);
        let w = s.read_window(PixelCoord::new(1, 1), 2).unwrap();
        let mut oracle = Vec::new();
        for row in 1..3 {
            for col in 1..3 {
                let i = (row * 4 + col) * 3;
                oracle.extend_from_slice(&s.pixels[i..i + 3]);
            }
        }
        assert_eq!(w, oracle);
        assert!(matches!(
            s.read_window(PixelCoord::new(3, 0), 2),
            Err(SceneError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn adjacent_windows_tile_the_scene() {
        let s = ramp_scene(12, 8, 0.3);
        let mut rebuilt = vec![0u8; s.pixels.len()];
        for tr in (0..8).step_by(4) {
            for tc in (0..12).step_by(4) {
                let w = s.read_window(PixelCoord::new(tc, tr), 4).unwrap();
                for r in 0..4 {
                    let dst = ((tr + r) * 12 + tc) * 3;
                    rebuilt[dst..dst + 12].copy_from_slice(&w[r * 12..r * 12 + 12]);
                }
            }
        }
        assert_eq!(rebuilt, s.pixels);
    }

    #[test]
    fn extract_tile_examples() {
        let s = ramp_scene(4, 4, 0.3);
        // Geometric center of a 4x4 scene is the corner shared by pixels (1,1)..(2,2).
        let center = s.frame.unproject(crate::geo::MeterPoint::new(0.6, -0.6));
        let t = s.extract_tile(center, 4, "r").unwrap();
        assert_eq!(t.pixels, s.pixels);

        let c22 = s.pixel_center(PixelCoord::new(2, 2));
        let t = s.extract_tile(c22, 2, "r").unwrap();
        assert_eq!(t.geometry.top_left, PixelCoord::new(1, 1));
        assert_eq!(t.pixels, s.read_window(PixelCoord::new(1, 1), 2).unwrap());
        assert_eq!(t.road_id, "r");
        assert_eq!(t.scene_id, "s");

        let near_edge = s.pixel_center(PixelCoord::new(0, 2));
        assert!(matches!(
            s.extract_tile(near_edge, 2, "r"),
            Err(SceneError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn extract_tile_is_deterministic() {
        let s = ramp_scene(40, 40, 0.3);
        let c = s.pixel_center(PixelCoord::new(20, 17));
        assert_eq!(s.extract_tile(c, 16, "a").unwrap(), s.extract_tile(c, 16, "a").unwrap());
    }
}
