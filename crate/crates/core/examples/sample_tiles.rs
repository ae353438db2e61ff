//! Place tile centers along roads and cut geo-referenced tiles from a scene.
//!
//! `cargo run --release --example sample_tiles`

use roadscope::osm_ingest::parse_roads;
use roadscope::pipeline::sample_roads;
use roadscope::synth::{generate_scene, SynthConfig};

fn main() -> roadscope::Result<()> {
    let synth = SynthConfig { n_roads: 2, scene_size: 1200, seed: 5, ..SynthConfig::default() };
    let generated = generate_scene(&synth)?;
    let scene = &generated.scene;
    let roads = parse_roads(&generated.geojson())?.records;
    println!("scene {} ({}x{} px at {} m/px), {} roads", scene.id, scene.width, scene.height, scene.gsd(), roads.len());

    for (spacing, min_sep) in [(100.0, 0.0), (40.0, 0.0), (40.0, 60.0)] {
        let samples = sample_roads(&roads, spacing, min_sep);
        println!("spacing {spacing} m, min separation {min_sep} m: {} centers", samples.len());
    }

    let samples = sample_roads(&roads, 100.0, 0.0);
    let mut inside = 0;
    for s in &samples {
        match scene.extract_tile(s.point, synth.tile_size, &s.road_id) {
            Ok(tile) => {
                inside += 1;
                if inside <= 3 {
                    let g = tile.geometry;
                    println!(
                        "  {} at {:.1} m: tile at px ({}, {}), {} bytes",
                        s.road_id, s.chainage, g.top_left.col, g.top_left.row, tile.pixels.len()
                    );
                }
            }
            Err(e) => println!("  {} at {:.1} m skipped: {e}", s.road_id, s.chainage),
        }
    }
    println!("{inside} of {} tiles fit inside the scene", samples.len());
    Ok(())
}
