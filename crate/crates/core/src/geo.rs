//! Coordinates, the local equirectangular frame and axis-aligned geotransforms.
//!
//! Conventions shared by every spatial module:
//!
//! - geographic points are WGS84 `(lon, lat)` in degrees;
//! - a [`LocalFrame`] maps degrees to meters east/north of its origin using a
//!   constant meters-per-degree scale (longitude scaled by `cos(origin.lat)`);
//! - pixels are indexed `(col, row)` from the top-left corner, rows growing
//!   southward; meters map to pixels with `floor`, pixels map back to their
//!   center.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Meters per degree of latitude used by default frames.
pub const M_PER_DEG_LAT: f64 = 111_320.0;
/// Frames are restricted to `|lat| < MAX_FRAME_LAT`.
pub const MAX_FRAME_LAT: f64 = 85.0;
/// Default ground sample distance, meters per pixel.
pub const DEFAULT_GSD: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lon {lon}, lat {lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("latitude {0} outside the supported band |lat| < 85")]
    LatitudeOutOfBand(f64),
    #[error("polyline needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("polyline has identical consecutive points at index {0}")]
    RepeatedPoint(usize),
    #[error("invalid frame scale {0}")]
    InvalidScale(f64),
    #[error("invalid ground sample distance {0}")]
    InvalidGsd(f64),
    #[error("point ({x:.3} m, {y:.3} m) maps to pixel ({col}, {row}) outside a {width}x{height} raster")]
    OutOfFootprint {
        x: f64,
        y: f64,
        col: i64,
        row: i64,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::InvalidCoordinate { lon, lat });
        }
        Ok(Self { lon, lat })
    }
}

/// Position in meters east (`x`) and north (`y`) of a frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterPoint {
    pub x: f64,
    pub y: f64,
}

impl MeterPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &MeterPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Ordered road centerline, at least two points, no consecutive repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct Polyline {
    points: Vec<GeoPoint>,
}

impl Polyline {
    pub fn new(points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        if points.len() < 2 {
            return Err(GeoError::TooFewPoints(points.len()));
        }
        if let Some(i) = points.windows(2).position(|w| w[0] == w[1]) {
            return Err(GeoError::RepeatedPoint(i + 1));
        }
        Ok(Self { points })
    }

    /// Drops consecutive duplicates first; fails if fewer than 2 points remain.
    pub fn from_points_dedup(mut points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        points.dedup();
        Self::new(points)
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn first(&self) -> GeoPoint {
        self.points[0]
    }
}

impl TryFrom<Vec<GeoPoint>> for Polyline {
    type Error = GeoError;
    fn try_from(points: Vec<GeoPoint>) -> Result<Self, GeoError> {
        Polyline::new(points)
    }
}

impl From<Polyline> for Vec<GeoPoint> {
    fn from(p: Polyline) -> Self {
        p.points
    }
}

/// Local equirectangular projection anchored at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalFrame {
    origin: GeoPoint,
    m_per_deg_lat: f64,
    m_per_deg_lon: f64,
}

impl LocalFrame {
    pub fn new(origin: GeoPoint) -> Result<Self, GeoError> {
        Self::with_scale(origin, M_PER_DEG_LAT)
    }

    pub fn with_scale(origin: GeoPoint, m_per_deg_lat: f64) -> Result<Self, GeoError> {
        if origin.lat.abs() >= MAX_FRAME_LAT {
            return Err(GeoError::LatitudeOutOfBand(origin.lat));
        }
        if !(m_per_deg_lat.is_finite() && m_per_deg_lat > 0.0) {
            return Err(GeoError::InvalidScale(m_per_deg_lat));
        }
        let m_per_deg_lon = m_per_deg_lat * origin.lat.to_radians().cos();
        Ok(Self {
            origin,
            m_per_deg_lat,
            m_per_deg_lon,
        })
    }

    pub fn origin(&self) -> GeoPoint {
        self.origin
    }

    pub fn m_per_deg_lat(&self) -> f64 {
        self.m_per_deg_lat
    }

    pub fn m_per_deg_lon(&self) -> f64 {
        self.m_per_deg_lon
    }

    pub fn project(&self, p: GeoPoint) -> Result<MeterPoint, GeoError> {
        if p.lat.abs() >= MAX_FRAME_LAT {
            return Err(GeoError::LatitudeOutOfBand(p.lat));
        }
        Ok(MeterPoint {
            x: (p.lon - self.origin.lon) * self.m_per_deg_lon,
            y: (p.lat - self.origin.lat) * self.m_per_deg_lat,
        })
    }

    pub fn unproject(&self, m: MeterPoint) -> GeoPoint {
        GeoPoint {
            lon: self.origin.lon + m.x / self.m_per_deg_lon,
            lat: self.origin.lat + m.y / self.m_per_deg_lat,
        }
    }
}

/// Integer pixel index; `row` grows southward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelCoord {
    pub col: usize,
    pub row: usize,
}

impl PixelCoord {
    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

/// Axis-aligned affine transform: top-left pixel corner at
/// `(origin_x, origin_y)` frame meters, square pixels of `gsd` meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub gsd: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, gsd: f64) -> Result<Self, GeoError> {
        if !(gsd.is_finite() && gsd > 0.0) {
            return Err(GeoError::InvalidGsd(gsd));
        }
        Ok(Self {
            origin_x,
            origin_y,
            gsd,
        })
    }

    /// Continuous pixel coordinates `(col, row)`; pixel `(c, r)` spans `[c, c+1) x [r, r+1)`.
    pub fn to_pixel_f(&self, m: MeterPoint) -> (f64, f64) {
        (
            (m.x - self.origin_x) / self.gsd,
            (self.origin_y - m.y) / self.gsd,
        )
    }

    /// Signed pixel index, no bounds check.
    pub fn to_pixel_signed(&self, m: MeterPoint) -> (i64, i64) {
        let (c, r) = self.to_pixel_f(m);
        (c.floor() as i64, r.floor() as i64)
    }

    pub fn geo_to_pixel(
        &self,
        m: MeterPoint,
        width: usize,
        height: usize,
    ) -> Result<PixelCoord, GeoError> {
        let (col, row) = self.to_pixel_signed(m);
        if col < 0 || row < 0 || col >= width as i64 || row >= height as i64 {
            return Err(GeoError::OutOfFootprint {
                x: m.x,
                y: m.y,
                col,
                row,
                width,
                height,
            });
        }
        Ok(PixelCoord::new(col as usize, row as usize))
    }

    /// Center of pixel `pc`.
    pub fn pixel_to_geo(&self, pc: PixelCoord) -> MeterPoint {
        MeterPoint {
            x: self.origin_x + (pc.col as f64 + 0.5) * self.gsd,
            y: self.origin_y - (pc.row as f64 + 0.5) * self.gsd,
        }
    }

    /// Transform of a sub-window whose top-left pixel is `top_left`.
    pub fn window(&self, top_left: PixelCoord) -> GeoTransform {
        GeoTransform {
            origin_x: self.origin_x + top_left.col as f64 * self.gsd,
            origin_y: self.origin_y - top_left.row as f64 * self.gsd,
            gsd: self.gsd,
        }
    }
}

/// Great-circle distance in meters on a sphere of mean radius 6,371,008.8 m.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    const R: f64 = 6_371_008.8;
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * R * h.sqrt().asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gp(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lon, lat).unwrap()
    }

    #[test]
    fn project_examples() {
        let f = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert_eq!(f.project(gp(0.0, 0.0)).unwrap(), MeterPoint::new(0.0, 0.0));
        let m = f.project(gp(0.001, 0.0)).unwrap();
        assert!((m.x - 111.32).abs() < 1e-9 && m.y == 0.0);

        let f = LocalFrame::new(gp(36.8, -1.3)).unwrap();
        let m = f.project(gp(36.8, -1.3 + 0.0001)).unwrap();
        assert!((m.y - 11.132).abs() < 1e-9, "{}", m.y);
    }

    #[test]
    fn unproject_examples() {
        let f = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert_eq!(f.unproject(MeterPoint::new(0.0, 0.0)), gp(0.0, 0.0));
        let g = f.unproject(MeterPoint::new(111.32, 0.0));
        assert!((g.lon - 0.001).abs() < 1e-12 && g.lat == 0.0);
    }

    #[test]
    fn project_rejects_polar_latitudes() {
        let f = LocalFrame::new(gp(0.0, 0.0)).unwrap();
        assert!(matches!(
            f.project(gp(0.0, 86.0)),
            Err(GeoError::LatitudeOutOfBand(_))
        ));
        assert!(LocalFrame::new(gp(0.0, -85.0)).is_err());
    }

    #[test]
    fn geo_to_pixel_examples() {
        let t = GeoTransform::new(0.0, 300.0, 0.3).unwrap();
        assert_eq!(
            t.geo_to_pixel(MeterPoint::new(0.0, 300.0), 1000, 1000).unwrap(),
            PixelCoord::new(0, 0)
        );
        assert_eq!(
            t.geo_to_pixel(MeterPoint::new(0.3, 299.7), 1000, 1000).unwrap(),
            PixelCoord::new(1, 1)
        );
        assert_eq!(
            t.geo_to_pixel(MeterPoint::new(0.29, 300.0), 1000, 1000).unwrap(),
            PixelCoord::new(0, 0)
        );
        assert!(matches!(
            t.geo_to_pixel(MeterPoint::new(-0.01, 300.0), 1000, 1000),
            Err(GeoError::OutOfFootprint { col: -1, .. })
        ));
        assert!(t.geo_to_pixel(MeterPoint::new(300.0, 150.0), 1000, 1000).is_err());
    }

    #[test]
    fn pixel_to_geo_examples() {
        let t = GeoTransform::new(0.0, 300.0, 0.3).unwrap();
        let m = t.pixel_to_geo(PixelCoord::new(0, 0));
        assert!((m.x - 0.15).abs() < 1e-12 && (m.y - 299.85).abs() < 1e-12);
        let m = t.pixel_to_geo(PixelCoord::new(999, 999));
        assert!((m.x - 299.85).abs() < 1e-9 && (m.y - 0.15).abs() < 1e-9);
    }

    #[test]
    fn pixel_center_round_trip_exhaustive_small() {
        let t = GeoTransform::new(12.5, -40.0, 0.3).unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let pc = PixelCoord::new(col, row);
                assert_eq!(t.geo_to_pixel(t.pixel_to_geo(pc), 64, 64).unwrap(), pc);
            }
        }
    }

    #[test]
    fn pixel_center_round_trip_sampled_large() {
        let t = GeoTransform::new(0.0, 300.0, 0.3).unwrap();
        for row in (0..1000).step_by(7) {
            for col in (0..1000).step_by(3) {
                let pc = PixelCoord::new(col, row);
                assert_eq!(t.geo_to_pixel(t.pixel_to_geo(pc), 1000, 1000).unwrap(), pc);
            }
        }
        let pc = PixelCoord::new(999, 999);
        assert_eq!(t.geo_to_pixel(t.pixel_to_geo(pc), 1000, 1000).unwrap(), pc);
    }

    #[test]
    fn polyline_validation() {
        assert!(matches!(
            Polyline::new(vec![gp(0.0, 0.0)]),
            Err(GeoError::TooFewPoints(1))
        ));
        assert!(matches!(
            Polyline::new(vec![gp(0.0, 0.0), gp(0.0, 0.0), gp(1.0, 0.0)]),
            Err(GeoError::RepeatedPoint(1))
        ));
        let p = Polyline::from_points_dedup(vec![gp(0.0, 0.0), gp(0.0, 0.0), gp(1.0, 0.0)]).unwrap();
        assert_eq!(p.points().len(), 2);
    }

    #[test]
    fn round_trip_ten_thousand_points() {
        use rand::Rng;
        let mut rng = crate::rng::stream(1, "geo/roundtrip");
        for _ in 0..10_000 {
            let origin = gp(rng.random_range(-180.0..180.0), rng.random_range(-84.9..84.9));
            let f = LocalFrame::new(origin).unwrap();
            let p = gp(rng.random_range(-180.0..180.0), rng.random_range(-84.9..84.9));
            let back = f.unproject(f.project(p).unwrap());
            assert!((back.lon - p.lon).abs() < 1e-9 && (back.lat - p.lat).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn local_distance_tracks_haversine(
            olat in -60.0f64..60.0, olon in -179.0f64..179.0,
            bearing in 0.0f64..std::f64::consts::TAU, dist in 20.0f64..300.0,
            bearing2 in 0.0f64..std::f64::consts::TAU, dist2 in 0.0f64..300.0,
        ) {
            let f = LocalFrame::new(gp(olon, olat)).unwrap();
            let a = f.unproject(MeterPoint::new(dist * bearing.cos(), dist * bearing.sin()));
            let b = f.unproject(MeterPoint::new(dist2 * bearing2.cos(), dist2 * bearing2.sin()));
            let truth = haversine_m(a, b);
            prop_assume!(truth > 1.0);
            let local = f.project(a).unwrap().distance(&f.project(b).unwrap());
            prop_assert!(((local - truth) / truth).abs() < 0.005, "local {local} truth {truth}");
        }
    }
}
