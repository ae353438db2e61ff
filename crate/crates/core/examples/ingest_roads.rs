//! Parse a GeoJSON road export into three-class road records.
//!
//! `cargo run --example ingest_roads [roads.geojson]`

use roadscope::osm_ingest::{parse_roads, read_road_table, write_road_table};

const SAMPLE: &str = r#"{
  "type": "FeatureCollection",
  "features": [
    {"type": "Feature", "id": "way/1", "properties": {"highway": "primary"},
     "geometry": {"type": "LineString", "coordinates": [[36.800, -1.280], [36.802, -1.281], [36.805, -1.281]]}},
    {"type": "Feature", "id": "way/2", "properties": {"highway": "Residential"},
     "geometry": {"type": "MultiLineString", "coordinates": [[[36.801, -1.283], [36.803, -1.284]], [[36.803, -1.284], [36.804, -1.286]]]}},
    {"type": "Feature", "id": "way/3", "properties": {"highway": "track"},
     "geometry": {"type": "LineString", "coordinates": [[36.806, -1.282], [36.807, -1.285]]}},
    {"type": "Feature", "id": "way/4", "properties": {"highway": "footway"},
     "geometry": {"type": "LineString", "coordinates": [[36.806, -1.282], [36.806, -1.283]]}},
    {"type": "Feature", "id": "node/5", "properties": {"highway": "primary"},
     "geometry": {"type": "Point", "coordinates": [36.8, -1.28]}}
  ]
}"#;

fn main() -> roadscope::Result<()> {
    let text = match std::env::args().nth(1) {
        Some(path) => std::fs::read_to_string(&path).map_err(roadscope::Error::io(&path))?,
        None => SAMPLE.to_string(),
    };
    let parsed = parse_roads(&text)?;
    for r in &parsed.records {
        println!("{:<10} {:<12} -> {:<9} {} vertices", r.id, r.raw_tag, r.class.as_str(), r.polyline.points().len());
    }
    println!("features {}, records {}, skipped {:?}", parsed.stats.features, parsed.stats.records, parsed.stats.skipped);

    let mut table = Vec::new();
    write_road_table(&mut table, &parsed.records).expect("in-memory write");
    let back = read_road_table(table.as_slice())?;
    assert_eq!(back, parsed.records);
    println!("road table: {} bytes, round-trips exactly", table.len());
    Ok(())
}
