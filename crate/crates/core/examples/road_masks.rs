//! Rasterize roads into per-tile masks and occlude either side of them.
//!
//! `cargo run --release --example road_masks`
//! Writes a tile, its mask and both occluded versions as PNGs.

use roadscope::imageio::{write_png, PixelFormat};
use roadscope::maskgen::{apply_mask, bresenham, dilate, rasterize, road_mask_for_tile, DilationConfig, MaskMode};
use roadscope::osm_ingest::parse_roads;
use roadscope::pipeline::sample_roads;
use roadscope::synth::{generate_scene, SynthConfig};

fn main() -> roadscope::Result<()> {
    println!("bresenham (0,0)->(5,2): {:?}", bresenham((0, 0), (5, 2)));
    let line = rasterize(&[((1, 1), (9, 4))], 11, 6);
    let thick = dilate(&line, 1);
    for y in 0..6 {
        let row: String = (0..11).map(|x| if line.get(x, y) { '#' } else if thick.get(x, y) { '+' } else { '.' }).collect();
        println!("  {row}");
    }

    let synth = SynthConfig { n_roads: 2, scene_size: 1200, seed: 8, ..SynthConfig::default() };
    let generated = generate_scene(&synth)?;
    let scene = &generated.scene;
    let roads = parse_roads(&generated.geojson())?.records;
    let sample = &sample_roads(&roads, 100.0, 0.0)[2];
    let tile = scene.extract_tile(sample.point, synth.tile_size, &sample.road_id)?;
    let refs: Vec<_> = roads.iter().collect();
    let radii = DilationConfig::default();
    let mask = road_mask_for_tile(&refs, &tile.geometry, &radii);
    println!(
        "tile on {} ({}): {:.1}% road pixels with radius {} px",
        sample.road_id,
        sample.class,
        100.0 * mask.count() as f64 / (tile.size * tile.size) as f64,
        radii.radius(sample.class)
    );

    let out = std::env::temp_dir().join("roadscope-road-masks");
    std::fs::create_dir_all(&out).map_err(roadscope::Error::io(&out))?;
    let s = tile.size;
    write_png(&out.join("mask.png"), s, s, PixelFormat::Gray8, &mask.to_gray(), &[])?;
    for mode in MaskMode::ALL {
        let img = apply_mask(&tile.pixels, s, &mask, mode)?;
        let path = out.join(format!("{}.png", mode.as_str()));
        write_png(&path, s, s, PixelFormat::Rgb8, &img, &[])?;
        println!("{:<16} -> {}", mode.scenario(), path.display());
    }
    Ok(())
}
