//! Road masks: polyline rasterization, radial dilation and occlusion.
//!
//! A road's vertices are projected into tile pixel space, each consecutive
//! pair is clipped to the tile and drawn with Bresenham's integer line
//! algorithm, and the resulting one-pixel chain is dilated by a Euclidean
//! disk whose radius depends on the road class. Multiplying a tile by the
//! mask keeps the road; multiplying by its inverse keeps the context.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::{self, ImageError, PixelFormat};
use crate::osm_ingest::{RoadClass, RoadRecord};
use crate::raster_store::TileGeometry;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("tile is {tile}x{tile} but mask is {width}x{height}")]
    SizeMismatch {
        tile: usize,
        width: usize,
        height: usize,
    },
    #[error("mask image must be 8-bit grayscale: {0}")]
    Format(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Which pixels survive occlusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    None,
    /// Context zeroed ("context occluded").
    RoadOnly,
    /// Road zeroed ("road occluded").
    ContextOnly,
}

impl MaskMode {
    pub const ALL: [MaskMode; 3] = [MaskMode::None, MaskMode::RoadOnly, MaskMode::ContextOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::None => "none",
            MaskMode::RoadOnly => "road_only",
            MaskMode::ContextOnly => "context_only",
        }
    }

    /// Scenario label in occlusion terms.
    pub fn scenario(self) -> &'static str {
        match self {
            MaskMode::None => "no mask",
            MaskMode::RoadOnly => "context occluded",
            MaskMode::ContextOnly => "road occluded",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(MaskMode::None),
            "road_only" | "road-only" => Ok(MaskMode::RoadOnly),
            "context_only" | "context-only" => Ok(MaskMode::ContextOnly),
            other => Err(format!(
                "unknown mask mode {other:?} (expected none, road_only, context_only)"
            )),
        }
    }
}

/// Binary raster, row-major, `true` = road.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn square(size: usize) -> Self {
        Self::empty(size, size)
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize) {
        self.bits[row * self.width + col] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn union_with(&mut self, other: &Mask) {
        assert_eq!((self.width, self.height), (other.width, other.height));
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    /// Sub-mask with top-left pixel `(col, row)`.
    pub fn crop(&self, col: usize, row: usize, width: usize, height: usize) -> Mask {
        let mut out = Mask::empty(width, height);
        for r in 0..height {
            let src = (row + r) * self.width + col;
            out.bits[r * width..(r + 1) * width].copy_from_slice(&self.bits[src..src + width]);
        }
        out
    }

    pub fn to_gray(&self) -> Vec<u8> {
        self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

pub fn write_mask_png(path: &Path, mask: &Mask, text: &[(&str, &str)]) -> Result<(), MaskError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| ImageError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    imageio::write_png(
        path,
        mask.width,
        mask.height,
        PixelFormat::Gray8,
        &mask.to_gray(),
        text,
    )?;
    Ok(())
}

/// Reads a grayscale PNG; values ≥ 128 are road.
pub fn read_mask_png(path: &Path) -> Result<Mask, MaskError> {
    let img = imageio::read_png(path)?;
    if img.format != PixelFormat::Gray8 {
        return Err(MaskError::Format(path.display().to_string()));
    }
    Ok(Mask {
        width: img.width,
        height: img.height,
        bits: img.data.iter().map(|&v| v >= 128).collect(),
    })
}

/// Per-class dilation radii in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DilationConfig {
    pub major: u32,
    pub minor: u32,
    pub two_track: u32,
}

impl Default for DilationConfig {
    fn default() -> Self {
        Self {
            major: 25,
            minor: 13,
            two_track: 8,
        }
    }
}

impl DilationConfig {
    pub fn uniform(radius: u32) -> Self {
        Self {
            major: radius,
            minor: radius,
            two_track: radius,
        }
    }

    pub fn radius(&self, class: RoadClass) -> u32 {
        match class {
            RoadClass::Major => self.major,
            RoadClass::Minor => self.minor,
            RoadClass::TwoTrack => self.two_track,
        }
    }
}

/// Integer Bresenham chain from `a` to `b`, both inclusive, in `a → b` order.
///
/// Along the major axis every index is visited once; the minor coordinate is
/// the one nearest the ideal line, with exact ties resolved toward the lower
/// index. Because the tie rule is absolute rather than direction-relative,
/// `bresenham(b, a)` is exactly the reverse of `bresenham(a, b)`.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let x_major = dx.abs() >= dy.abs();
    // Walk along the major axis in increasing order, then restore a → b order.
    let (mut p, mut q) = (a, b);
    let major = |t: (i64, i64)| if x_major { t.0 } else { t.1 };
    let reversed = major(p) > major(q);
    if reversed {
        std::mem::swap(&mut p, &mut q);
    }
    let (u0, v0, du, dv) = if x_major {
        (p.0, p.1, q.0 - p.0, q.1 - p.1)
    } else {
        (p.1, p.0, q.1 - p.1, q.0 - p.0)
    };
    let step = dv.signum();
    let adv = dv.abs();
    let mut out = Vec::with_capacity(du as usize + 1);
    let mut v = v0;
    // err = 2·i·|dv| − (2k + 1)·du for the current minor offset k.
    let mut err = -du;
    for i in 0..=du {
        out.push(if x_major { (u0 + i, v) } else { (v, u0 + i) });
        err += 2 * adv;
        // Ties (err == 0) move toward the lower minor index.
        let advance = if step > 0 { err > 0 } else { err >= 0 };
        if advance && adv != 0 {
            v += step;
            err -= 2 * du;
        }
    }
    if reversed {
        out.reverse();
    }
    out
}

/// Liang–Barsky clip of a continuous segment to `[0, w] × [0, h]`.
pub fn clip_segment(
    a: (f64, f64),
    b: (f64, f64),
    w: f64,
    h: f64,
) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-dx, a.0), (dx, w - a.0), (-dy, a.1), (dy, h - a.1)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                if r > t1 {
                    return None;
                }
                t0 = t0.max(r);
            } else {
                if r < t0 {
                    return None;
                }
                t1 = t1.min(r);
            }
        }
    }
    Some((
        (a.0 + t0 * dx, a.1 + t0 * dy),
        (a.0 + t1 * dx, a.1 + t1 * dy),
    ))
}

/// Pixel segment in tile coordinates, endpoints inside the tile.
pub type PixelSegment = ((i64, i64), (i64, i64));

/// Projects a road into tile pixel space and clips each segment to the tile.
pub fn polyline_to_pixels(
    road: &crate::geo::Polyline,
    geometry: &TileGeometry,
    size: usize,
) -> Vec<PixelSegment> {
    let pts: Vec<(f64, f64)> = road
        .points()
        .iter()
        .filter_map(|p| geometry.frame.project(*p).ok())
        .map(|m| geometry.transform.to_pixel_f(m))
        .collect();
    let s = size as f64;
    let to_px = |v: f64| (v.floor() as i64).clamp(0, size as i64 - 1);
    pts.windows(2)
        .filter_map(|w| clip_segment(w[0], w[1], s, s))
        .map(|(a, b)| ((to_px(a.0), to_px(a.1)), (to_px(b.0), to_px(b.1))))
        .collect()
}

/// One-pixel-wide rasterization of clipped segments.
pub fn rasterize(segments: &[PixelSegment], width: usize, height: usize) -> Mask {
    let mut m = Mask::empty(width, height);
    for &(a, b) in segments {
        for (c, r) in bresenham(a, b) {
            if c >= 0 && r >= 0 && (c as usize) < width && (r as usize) < height {
                m.set(c as usize, r as usize);
            }
        }
    }
    m
}

fn isqrt(n: i64) -> i64 {
    let mut r = (n as f64).sqrt() as i64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Euclidean-disk dilation: bit `(x, y)` is set iff some input bit `(u, v)`
/// has `(x-u)² + (y-v)² ≤ radius²`. Clipped at the borders.
pub fn dilate(mask: &Mask, radius: u32) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let r = radius as i64;
    let half_widths: Vec<i64> = (-r..=r).map(|dy| isqrt(r * r - dy * dy)).collect();
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = Mask::empty(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            if !mask.bits[(y * w + x) as usize] {
                continue;
            }
            for (k, &hw) in half_widths.iter().enumerate() {
                let yy = y + k as i64 - r;
                if yy < 0 || yy >= h {
                    continue;
                }
                let x0 = (x - hw).max(0);
                let x1 = (x + hw).min(w - 1);
                let row = (yy * w) as usize;
                out.bits[row + x0 as usize..=row + x1 as usize].fill(true);
            }
        }
    }
    out
}

/// Occludes an interleaved RGB tile. Occluded pixels become black.
pub fn apply_mask(pixels: &[u8], size: usize, mask: &Mask, mode: MaskMode) -> Result<Vec<u8>, MaskError> {
    if mask.width != size || mask.height != size || pixels.len() != size * size * 3 {
        return Err(MaskError::SizeMismatch {
            tile: size,
            width: mask.width,
            height: mask.height,
        });
    }
    let keep_road = match mode {
        MaskMode::None => return Ok(pixels.to_vec()),
        MaskMode::RoadOnly => true,
        MaskMode::ContextOnly => false,
    };
    let mut out = pixels.to_vec();
    for (px, &bit) in out.chunks_exact_mut(3).zip(&mask.bits) {
        if bit != keep_road {
            px.fill(0);
        }
    }
    Ok(out)
}

/// Union over roads of the dilated, clipped rasterization of each road.
pub fn road_mask_for_tile(
    roads: &[&RoadRecord],
    geometry: &TileGeometry,
    cfg: &DilationConfig,
) -> Mask {
    let size = geometry.size;
    let mut out = Mask::square(size);
    for class in RoadClass::ALL {
        let segments: Vec<PixelSegment> = roads
            .iter()
            .filter(|r| r.class == class)
            .flat_map(|r| polyline_to_pixels(&r.polyline, geometry, size))
            .collect();
        if segments.is_empty() {
            continue;
        }
        let line = rasterize(&segments, size, size);
        out.union_with(&dilate(&line, cfg.radius(class)));
    }
    out
}
