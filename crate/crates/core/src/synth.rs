//! Synthetic scenes whose class signal sits at a known place.
//!
//! A scene is cut into horizontal lanes, one road per lane. Each lane's
//! road and surroundings belong to that road's class. The class is encoded
//! as a low-contrast, zero-mean texture (horizontal stripes, vertical
//! stripes or a checkerboard) painted only where
//! [`SignalLocation`] says: on road pixels, on context pixels, or both.
//! Road pixels are exactly the dilated Bresenham raster of each road, so
//! masks from [`crate::maskgen`] line up with the painted roads.
//!
//! Road textures are the same in every country style. Context textures are
//! permuted per style, which makes context cues country-specific.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::geo::{GeoPoint, MeterPoint, PixelCoord, Polyline};
use crate::maskgen::{self, DilationConfig, Mask};
use crate::osm_ingest::{RoadClass, RoadRecord};
use crate::raster_store::{Scene, SceneError, TileGeometry};
use crate::rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible synthetic config: {0}")]
    ConfigInfeasible(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalLocation {
    Road,
    Context,
    Both,
}

impl SignalLocation {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalLocation::Road => "road",
            SignalLocation::Context => "context",
            SignalLocation::Both => "both",
        }
    }
    fn on_road(self) -> bool {
        matches!(self, SignalLocation::Road | SignalLocation::Both)
    }
    fn on_context(self) -> bool {
        matches!(self, SignalLocation::Context | SignalLocation::Both)
    }
}

impl std::str::FromStr for SignalLocation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "road" => Ok(SignalLocation::Road),
            "context" => Ok(SignalLocation::Context),
            "both" => Ok(SignalLocation::Both),
            other => Err(format!("unknown signal location {other:?} (road, context, both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub signal_location: SignalLocation,
    /// Palette id; also permutes context textures.
    pub country_style: u32,
    pub country: String,
    /// Roads per class.
    pub n_roads: usize,
    /// Scene side in pixels.
    pub scene_size: usize,
    /// Tile side the scene must accommodate around each road.
    pub tile_size: usize,
    pub noise_sigma: f64,
    pub texture_amplitude: f64,
    /// Texture period in pixels (even).
    pub texture_period: usize,
    pub gsd_m: f64,
    pub origin: GeoPoint,
    pub radii: DilationConfig,
    /// Tile-center spacing along each road when building a corpus.
    pub sample_spacing_m: f64,
    /// Minimum distance between kept tile centers.
    pub sample_min_separation_m: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            signal_location: SignalLocation::Context,
            country_style: 0,
            country: "AA".into(),
            n_roads: 8,
            scene_size: 4000,
            tile_size: 128,
            noise_sigma: 8.0,
            texture_amplitude: 24.0,
            texture_period: 8,
            gsd_m: 0.3,
            origin: GeoPoint { lon: 36.8, lat: -1.28 },
            radii: DilationConfig::uniform(24),
            sample_spacing_m: 40.0,
            sample_min_separation_m: 30.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub config: SynthConfig,
    pub scene: Scene,
    pub roads: Vec<RoadRecord>,
    /// Road pixels of the whole scene.
    pub road_mask: Mask,
}

impl SynthScene {
    /// FeatureCollection of the scene's roads, one LineString per road.
    pub fn geojson(&self) -> String {
        let features: Vec<_> = self
            .roads
            .iter()
            .map(|r| {
                let coords: Vec<[f64; 2]> = r.polyline.points().iter().map(|p| [p.lon, p.lat]).collect();
                json!({
                    "type": "Feature",
                    "id": r.id,
                    "properties": { "highway": r.raw_tag },
                    "geometry": { "type": "LineString", "coordinates": coords },
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({ "type": "FeatureCollection", "features": features }))
            .expect("geojson serializes")
    }

    /// Ground-truth road mask of a tile window.
    pub fn ground_truth(&self, geometry: &TileGeometry) -> Mask {
        self.road_mask
            .crop(geometry.top_left.col, geometry.top_left.row, geometry.size, geometry.size)
    }
}

const BACKGROUNDS: [[f64; 3]; 4] = [
    [92.0, 128.0, 72.0],
    [168.0, 138.0, 104.0],
    [118.0, 122.0, 150.0],
    [150.0, 150.0, 96.0],
];
const TINTS: [[f64; 3]; 4] = [
    [1.0, 0.85, 0.7],
    [0.7, 0.85, 1.0],
    [0.9, 1.0, 0.8],
    [1.0, 0.75, 0.95],
];
const ROAD_RGB: [f64; 3] = [112.0, 112.0, 112.0];

const RAW_TAGS: [&str; 3] = ["primary", "residential", "track"];

/// Zero-mean ±1 texture of `kind` at scene pixel `(col, row)`.
fn texture(kind: usize, col: usize, row: usize, period: usize) -> f64 {
    let half = (period / 2).max(1);
    let h = (row / half) % 2;
    let v = (col / half) % 2;
    let bit = match kind {
        0 => h,
        1 => v,
        _ => h ^ v,
    };
    if bit == 0 {
        1.0
    } else {
        -1.0
    }
}

pub fn lane_height(cfg: &SynthConfig) -> usize {
    cfg.scene_size / (3 * cfg.n_roads).max(1)
}

fn check(cfg: &SynthConfig) -> Result<(), SynthError> {
    let bad = |m: String| Err(SynthError::ConfigInfeasible(m));
    if cfg.n_roads == 0 {
        return bad("n_roads must be at least 1".into());
    }
    if cfg.tile_size == 0 || cfg.scene_size < cfg.tile_size {
        return bad(format!("scene {} px cannot hold a {} px tile", cfg.scene_size, cfg.tile_size));
    }
    let lane = lane_height(cfg);
    if lane * 4 < cfg.tile_size * 5 + 8 {
        return bad(format!(
            "{} roads need lanes of at least {} px for {} px tiles, scene gives {lane} px",
            3 * cfg.n_roads,
            (cfg.tile_size * 5 + 8).div_ceil(4),
            cfg.tile_size
        ));
    }
    if cfg.texture_period < 2 || cfg.texture_period % 2 != 0 {
        return bad("texture_period must be even and at least 2".into());
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.gsd_m > 0.0) {
        return bad("noise_sigma must be non-negative and gsd positive".into());
    }
    Ok(())
}

/// Class of each lane, top to bottom: every class `n_roads` times, shuffled.
fn lane_classes(cfg: &SynthConfig) -> Vec<RoadClass> {
    use rand::seq::SliceRandom;
    let mut classes: Vec<RoadClass> = (0..3 * cfg.n_roads)
        .map(|i| RoadClass::ALL[i % 3])
        .collect();
    classes.shuffle(&mut rng::stream(cfg.seed, &format!("synth/{}/lanes", cfg.country)));
    classes
}

pub fn generate_scene(cfg: &SynthConfig) -> Result<SynthScene, SynthError> {
    check(cfg)?;
    let size = cfg.scene_size;
    let lane = lane_height(cfg);
    let amp = (lane / 10) as f64;
    let scene_id = format!("synth_{}", cfg.country.to_lowercase());
    let frame_scene = Scene::new(scene_id.clone(), size, size, cfg.origin, cfg.gsd_m, cfg.country.clone(), vec![0; size * size * 3])?;
    let classes = lane_classes(cfg);

    let mut shape = rng::stream(cfg.seed, &format!("synth/{}/roads", cfg.country));
    let mut roads = Vec::with_capacity(classes.len());
    for (i, &class) in classes.iter().enumerate() {
        let center = (i * lane) as f64 + lane as f64 / 2.0;
        let w = size as f64;
        let pts: Vec<GeoPoint> = [0.5, 0.25 * w, 0.5 * w, 0.75 * w, w - 0.5]
            .into_iter()
            .map(|col| {
                let row = center + shape.random_range(-amp..=amp);
                let m = MeterPoint::new(col * cfg.gsd_m, -row * cfg.gsd_m);
                frame_scene.frame.unproject(m)
            })
            .collect();
        roads.push(RoadRecord {
            id: format!("{scene_id}/road{i}"),
            raw_tag: RAW_TAGS[class.index()].to_string(),
            polyline: Polyline::new(pts).expect("distinct vertices"),
            class,
        });
    }

    let whole = frame_scene.tile_geometry(PixelCoord::new(0, 0), size);
    let refs: Vec<&RoadRecord> = roads.iter().collect();
    let road_mask = maskgen::road_mask_for_tile(&refs, &whole, &cfg.radii);

    let style = cfg.country_style as usize;
    let bg = BACKGROUNDS[style % BACKGROUNDS.len()];
    let tint = TINTS[style % TINTS.len()];
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut nr = rng::stream(cfg.seed, &format!("synth/{}/noise", cfg.country));
    let a = cfg.texture_amplitude;
    let mut pixels = vec![0u8; size * size * 3];
    for row in 0..size {
        let class = classes[(row / lane).min(classes.len() - 1)].index();
        let context_kind = (class + style) % 3;
        for col in 0..size {
            let on_road = road_mask.get(col, row);
            let (base, signal) = if on_road {
                let t = if cfg.signal_location.on_road() { texture(class, col, row, cfg.texture_period) } else { 0.0 };
                (ROAD_RGB, [t * a; 3])
            } else {
                let t = if cfg.signal_location.on_context() { texture(context_kind, col, row, cfg.texture_period) } else { 0.0 };
                (bg, [t * a * tint[0], t * a * tint[1], t * a * tint[2]])
            };
            let px = &mut pixels[(row * size + col) * 3..(row * size + col) * 3 + 3];
            for ch in 0..3 {
                let n = if cfg.noise_sigma > 0.0 { noise.sample(&mut nr) } else { 0.0 };
                px[ch] = (base[ch] + signal[ch] + n).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let scene = Scene { pixels, ..frame_scene };
    Ok(SynthScene {
        config: cfg.clone(),
        scene,
        roads,
        road_mask,
    })
}

/// Two corpora with the same signal rules and different country styles.
pub fn generate_country_pair(a: &SynthConfig, b: &SynthConfig) -> Result<(SynthScene, SynthScene), SynthError> {
    if a.signal_location != b.signal_location {
        return Err(SynthError::ConfigInfeasible("country pair must share the signal location".into()));
    }
    if a.country == b.country {
        return Err(SynthError::ConfigInfeasible("country pair needs two country codes".into()));
    }
    Ok((generate_scene(a)?, generate_scene(b)?))
}
