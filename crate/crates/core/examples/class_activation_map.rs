//! Class activation maps: where in a tile does the model look?
//!
//! `cargo run --release --example class_activation_map [road|context] [epochs]`
//!
//! Trains on one signal location, then reports how much CAM mass falls on
//! road pixels and writes the first heatmap next to its tile.

use roadscope::dataset_builder::Split;
use roadscope::diagnostics::{cam, cam_locality, resize_mask};
use roadscope::imageio::{write_png, PixelFormat};
use roadscope::maskgen::{read_mask_png, MaskMode};
use roadscope::nn::{fit, Model, ModelSpec, TrainConfig};
use roadscope::pipeline::{build_synth_corpus, load_dataset, load_input, read_tile, split_indices, BuildConfig, Provenance, Workspace};
use roadscope::synth::{SignalLocation, SynthConfig};

fn main() -> roadscope::Result<()> {
    let mut args = std::env::args().skip(1);
    let signal: SignalLocation = args.next().map(|s| s.parse().expect("signal")).unwrap_or(SignalLocation::Road);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(20);

    let dir = std::env::temp_dir().join("roadscope-cam");
    let _ = std::fs::remove_dir_all(&dir);
    let ws = Workspace::new(&dir);
    let synth = SynthConfig { signal_location: signal, seed: 1, ..SynthConfig::default() };
    let prov = Provenance { config_digest: "example".into(), seed: 1 };
    let (manifest, _) = build_synth_corpus(&ws, "dataset", &synth, &BuildConfig::default(), &prov)?;

    let cfg = TrainConfig { lr: 1e-3, epochs, seed: 1, ..TrainConfig::default() };
    let train = load_dataset(&manifest, &split_indices(&manifest, Split::Train), MaskMode::None, cfg.input_size)?;
    let mut model = Model::new(ModelSpec::tiny_road_net(cfg.input_size), cfg.seed)?;
    fit(&mut model, &train, &cfg)?;

    let (mut total, mut n, mut written) = (0.0, 0, false);
    for i in split_indices(&manifest, Split::Test) {
        let entry = &manifest.entries[i];
        let x = load_input(&manifest, i, MaskMode::None, cfg.input_size)?;
        if model.predict(&x, 1)?[0] != entry.class.index() {
            continue;
        }
        let heat = cam(&model, &x, entry.class)?;
        let mask = read_mask_png(&manifest.resolve(entry.mask_path.as_deref().expect("corpus has masks")))?;
        total += cam_locality(&heat.upsampled, &resize_mask(&mask, heat.size))?;
        n += 1;
        if !written {
            let (px, size, _) = read_tile(&manifest, i, MaskMode::None)?;
            let gray: Vec<u8> = heat.upsampled.iter().map(|v| (v * 255.0).round() as u8).collect();
            write_png(&ws.reports().join("tile.png"), size, size, PixelFormat::Rgb8, &px, &[])?;
            write_png(&ws.reports().join("cam.png"), heat.size, heat.size, PixelFormat::Gray8, &gray, &[])?;
            println!("heatmap for a {} tile ({}x{} feature grid) in {}", entry.class, heat.grid_h, heat.grid_w, ws.reports().display());
            written = true;
        }
    }
    let road_share = 100.0 * manifest_road_share(&manifest)?;
    println!(
        "{} signal: mean CAM mass on road pixels {:.3} over {n} correct test tiles (roads cover {road_share:.0}% of a tile)",
        signal.as_str(),
        total / n.max(1) as f64
    );
    Ok(())
}

fn manifest_road_share(m: &roadscope::dataset_builder::Manifest) -> roadscope::Result<f64> {
    let (mut on, mut all) = (0usize, 0usize);
    for e in &m.entries {
        let mask = read_mask_png(&m.resolve(e.mask_path.as_deref().expect("corpus has masks")))?;
        on += mask.count();
        all += mask.width * mask.height;
    }
    Ok(on as f64 / all as f64)
}
