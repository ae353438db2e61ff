//! Tile centers along road polylines.

use serde::{Deserialize, Serialize};

use crate::geo::{GeoPoint, LocalFrame, MeterPoint};
use crate::osm_ingest::{RoadClass, RoadRecord};

pub const DEFAULT_SPACING_M: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub point: GeoPoint,
    pub road_id: String,
    pub class: RoadClass,
    /// Meters along the polyline from its first vertex.
    pub chainage: f64,
}

/// Points every `spacing` meters of arc length, starting at chainage 0.
///
/// Distances are measured in a local frame anchored at the first vertex.
pub fn sample_points(road: &RoadRecord, spacing: f64) -> Vec<SamplePoint> {
    assert!(spacing > 0.0, "spacing must be positive");
    let first = road.polyline.first();
    let Ok(frame) = LocalFrame::new(first) else {
        return Vec::new();
    };
    let verts: Vec<MeterPoint> = road
        .polyline
        .points()
        .iter()
        .filter_map(|p| frame.project(*p).ok())
        .collect();

    let make = |m: MeterPoint, chainage: f64| SamplePoint {
        point: frame.unproject(m),
        road_id: road.id.clone(),
        class: road.class,
        chainage,
    };

    let mut out = vec![SamplePoint {
        point: first,
        road_id: road.id.clone(),
        class: road.class,
        chainage: 0.0,
    }];
    let mut seg_start = 0.0;
    let mut k = 1usize;
    for w in verts.windows(2) {
        let len = w[0].distance(&w[1]);
        let seg_end = seg_start + len;
        loop {
            let target = k as f64 * spacing;
            if target > seg_end || len == 0.0 {
                break;
            }
            let t = (target - seg_start) / len;
            let m = MeterPoint::new(
                w[0].x + t * (w[1].x - w[0].x),
                w[0].y + t * (w[1].y - w[0].y),
            );
            out.push(make(m, target));
            k += 1;
        }
        seg_start = seg_end;
    }
    out
}

/// Greedy first-wins thinning: a point survives if it is at least `min_sep`
/// meters from every point kept before it. Order-dependent by definition.
pub fn min_separation_filter(points: Vec<SamplePoint>, min_sep: f64) -> Vec<SamplePoint> {
    assert!(min_sep >= 0.0, "min_sep must be non-negative");
    if min_sep == 0.0 || points.is_empty() {
        return points;
    }
    let Ok(frame) = LocalFrame::new(points[0].point) else {
        return points;
    };
    // Uniform grid with cell = min_sep: only the 3x3 neighbourhood can conflict.
    let mut grid: std::collections::HashMap<(i64, i64), Vec<MeterPoint>> = Default::default();
    let mut kept = Vec::new();
    for p in points {
        let Ok(m) = frame.project(p.point) else { continue };
        let cell = ((m.x / min_sep).floor() as i64, (m.y / min_sep).floor() as i64);
        let clash = (-1..=1).any(|dx| {
            (-1..=1).any(|dy| {
                grid.get(&(cell.0 + dx, cell.1 + dy))
                    .is_some_and(|v| v.iter().any(|q| q.distance(&m) < min_sep))
            })
        });
        if !clash {
            grid.entry(cell).or_default().push(m);
            kept.push(p);
        }
    }
    kept
}
