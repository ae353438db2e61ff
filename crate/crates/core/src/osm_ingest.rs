//! Road vector ingestion.
//!
//! Reads a GeoJSON `FeatureCollection` of OSM ways, resolves each feature's
//! `highway` tag through an aggregation table into one of three classes and
//! emits one [`RoadRecord`] per line part. Unknown tags and degenerate lines
//! are skipped and counted rather than treated as errors.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::{GeoPoint, Polyline};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed input at byte {offset}: {message}")]
    MalformedInput { offset: usize, message: String },
    #[error("no classifiable roads ({skipped} features skipped)")]
    EmptyResult { skipped: usize },
    #[error("road table line {line}: {message}")]
    RoadTable { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Aggregated road class, ordered `Major < Minor < TwoTrack`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadClass {
    Major,
    Minor,
    TwoTrack,
}

impl RoadClass {
    pub const ALL: [RoadClass; 3] = [RoadClass::Major, RoadClass::Minor, RoadClass::TwoTrack];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RoadClass> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoadClass::Major => "major",
            RoadClass::Minor => "minor",
            RoadClass::TwoTrack => "two_track",
        }
    }
}

impl fmt::Display for RoadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoadClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "major" => Ok(RoadClass::Major),
            "minor" => Ok(RoadClass::Minor),
            "two_track" | "two-track" | "twotrack" => Ok(RoadClass::TwoTrack),
            other => Err(format!("unknown road class {other:?}")),
        }
    }
}

/// Mapping from lower-case OSM `highway` values to classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TagTable {
    pub major: Vec<String>,
    pub minor: Vec<String>,
    pub two_track: Vec<String>,
}

impl Default for TagTable {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            major: v(&[
                "motorway",
                "trunk",
                "primary",
                "motorway_link",
                "trunk_link",
                "primary_link",
            ]),
            minor: v(&[
                "secondary",
                "tertiary",
                "unclassified",
                "residential",
                "secondary_link",
                "tertiary_link",
                "service",
            ]),
            two_track: v(&["track"]),
        }
    }
}

impl TagTable {
    /// Case-insensitive lookup; `None` for unmapped tags.
    pub fn classify(&self, raw_tag: &str) -> Option<RoadClass> {
        let tag = raw_tag.to_lowercase();
        let hit = |list: &[String]| list.iter().any(|t| t.eq_ignore_ascii_case(&tag));
        if hit(&self.major) {
            Some(RoadClass::Major)
        } else if hit(&self.minor) {
            Some(RoadClass::Minor)
        } else if hit(&self.two_track) {
            Some(RoadClass::TwoTrack)
        } else {
            None
        }
    }
}

/// Lookup in the default aggregation table.
pub fn classify_tag(raw_tag: &str) -> Option<RoadClass> {
    thread_local! {
        static DEFAULT: TagTable = TagTable::default();
    }
    DEFAULT.with(|t| t.classify(raw_tag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadRecord {
    pub id: String,
    pub raw_tag: String,
    pub polyline: Polyline,
    pub class: RoadClass,
}

/// Why a feature (or feature part) was not emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    MissingTag,
    UnknownTag,
    UnsupportedGeometry,
    Degenerate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestStats {
    /// Feature count after MultiLineString expansion.
    pub features: usize,
    pub records: usize,
    pub skipped: BTreeMap<SkipReason, usize>,
}

impl IngestStats {
    pub fn skipped_total(&self) -> usize {
        self.skipped.values().sum()
    }

    fn skip(&mut self, reason: SkipReason) {
        self.features += 1;
        *self.skipped.entry(reason).or_default() += 1;
    }
}

#[derive(Debug, Clone)]
pub struct ParsedRoads {
    pub records: Vec<RoadRecord>,
    pub stats: IngestStats,
}

/// Parses with the default tag table.
pub fn parse_roads(input: &str) -> Result<ParsedRoads, IngestError> {
    parse_roads_with(input, &TagTable::default())
}

pub fn parse_roads_with(input: &str, table: &TagTable) -> Result<ParsedRoads, IngestError> {
    let doc: Value = serde_json::from_str(input).map_err(|e| IngestError::MalformedInput {
        offset: byte_offset(input, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let malformed = |message: &str| IngestError::MalformedInput {
        offset: 0,
        message: message.to_string(),
    };
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(malformed("top-level object is not a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("FeatureCollection has no features array"))?;

    let mut stats = IngestStats::default();
    let mut records = Vec::new();
    for (i, feature) in features.iter().enumerate() {
        let id = feature_id(feature, i);
        let geometry = feature.get("geometry").unwrap_or(&Value::Null);
        let parts: Vec<(String, &Value)> = match geometry.get("type").and_then(Value::as_str) {
            Some("LineString") => vec![(id.clone(), &geometry["coordinates"])],
            Some("MultiLineString") => match geometry["coordinates"].as_array() {
                Some(lines) => lines
                    .iter()
                    .enumerate()
                    .map(|(k, line)| (format!("{id}#{k}"), line))
                    .collect(),
                None => {
                    stats.skip(SkipReason::Degenerate);
                    continue;
                }
            },
            _ => {
                stats.skip(SkipReason::UnsupportedGeometry);
                continue;
            }
        };
        let tag = feature
            .get("properties")
            .and_then(|p| p.get("highway"))
            .and_then(Value::as_str);
        for (part_id, coords) in parts {
            let Some(tag) = tag else {
                stats.skip(SkipReason::MissingTag);
                continue;
            };
            let Some(class) = table.classify(tag) else {
                stats.skip(SkipReason::UnknownTag);
                continue;
            };
            let Some(polyline) = parse_line(coords) else {
                stats.skip(SkipReason::Degenerate);
                continue;
            };
            stats.features += 1;
            stats.records += 1;
            records.push(RoadRecord {
                id: part_id,
                raw_tag: tag.to_string(),
                polyline,
                class,
            });
        }
    }
    if records.is_empty() {
        return Err(IngestError::EmptyResult {
            skipped: stats.skipped_total(),
        });
    }
    Ok(ParsedRoads { records, stats })
}

fn feature_id(feature: &Value, index: usize) -> String {
    let from = |v: &Value| match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    };
    feature
        .get("id")
        .and_then(from)
        .or_else(|| feature.get("properties").and_then(|p| p.get("id")).and_then(from))
        .unwrap_or_else(|| format!("feature{index}"))
}

fn parse_line(coords: &Value) -> Option<Polyline> {
    let pts = coords
        .as_array()?
        .iter()
        .map(|c| {
            let c = c.as_array()?;
            let lon = c.first()?.as_f64()?;
            let lat = c.get(1)?.as_f64()?;
            GeoPoint::new(lon, lat).ok()
        })
        .collect::<Option<Vec<_>>>()?;
    Polyline::from_points_dedup(pts).ok()
}

fn byte_offset(input: &str, line: usize, column: usize) -> usize {
    let line_start: usize = input
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    line_start + column.saturating_sub(1)
}

/// One line of the road table file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoadRow {
    id: String,
    raw_tag: String,
    class: RoadClass,
    coordinates: Vec<[f64; 2]>,
}

/// Writes the road table as JSON Lines.
pub fn write_road_table<W: Write>(mut out: W, roads: &[RoadRecord]) -> std::io::Result<()> {
    for r in roads {
        let row = RoadRow {
            id: r.id.clone(),
            raw_tag: r.raw_tag.clone(),
            class: r.class,
            coordinates: r.polyline.points().iter().map(|p| [p.lon, p.lat]).collect(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_road_table<R: BufRead>(input: R) -> Result<Vec<RoadRecord>, IngestError> {
    let mut roads = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| IngestError::RoadTable {
            line: i + 1,
            message,
        };
        let row: RoadRow = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let pts = row
            .coordinates
            .iter()
            .map(|c| GeoPoint::new(c[0], c[1]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| err(e.to_string()))?;
        roads.push(RoadRecord {
            id: row.id,
            raw_tag: row.raw_tag,
            polyline: Polyline::new(pts).map_err(|e| err(e.to_string()))?,
            class: row.class,
        });
    }
    Ok(roads)
}
