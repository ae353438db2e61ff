//! Build a balanced, split tile dataset and its manifest from a scene and roads.
//!
//! `cargo run --release --example build_dataset`

use roadscope::dataset_builder::{read_manifest, Split};
use roadscope::osm_ingest::parse_roads;
use roadscope::pipeline::{build_dataset, sample_roads, BuildConfig, Provenance, Workspace};
use roadscope::raster_store::{open_scene_dir, write_scene};
use roadscope::synth::{generate_scene, SynthConfig};
use roadscope::RoadClass;

fn main() -> roadscope::Result<()> {
    let dir = tempfile_dir("roadscope-build-dataset");
    let ws = Workspace::new(&dir);
    ws.create()?;

    let generated = generate_scene(&SynthConfig { n_roads: 3, scene_size: 1600, seed: 2, ..SynthConfig::default() })?;
    write_scene(&ws.scenes().join(&generated.scene.id), &generated.scene)?;
    let roads = parse_roads(&generated.geojson())?.records;

    let cfg = BuildConfig { spacing_m: 30.0, min_separation_m: 20.0, test_ratio: 0.2, ..BuildConfig::default() };
    let scenes = open_scene_dir(&ws.scenes())?;
    let samples = sample_roads(&roads, cfg.spacing_m, cfg.min_separation_m);
    let prov = Provenance { config_digest: "example".into(), seed: 2 };
    let report = build_dataset(&ws, "example", &scenes, &samples, &cfg, &prov)?;
    println!("{:#?}", report.candidates);

    let manifest = read_manifest(&report.manifest)?;
    for split in [Split::Train, Split::Test] {
        let entries = manifest.with_split(split);
        let counts: Vec<String> = RoadClass::ALL
            .iter()
            .map(|c| format!("{c} {}", entries.iter().filter(|e| e.class == *c).count()))
            .collect();
        println!("{split:?}: {} tiles ({})", entries.len(), counts.join(", "));
    }
    println!("manifest: {}", report.manifest.display());
    Ok(())
}

fn tempfile_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}
