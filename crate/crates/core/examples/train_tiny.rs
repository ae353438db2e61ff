//! Train TinyRoadNet on a small synthetic corpus, save it and reload it.
//!
//! `cargo run --release --example train_tiny [epochs]`

use roadscope::dataset_builder::Split;
use roadscope::diagnostics::{compute_metrics, evaluate_dataset};
use roadscope::maskgen::MaskMode;
use roadscope::nn::io::{load_model, save_model};
use roadscope::nn::train::fit_with;
use roadscope::nn::{Model, ModelSpec, TrainConfig};
use roadscope::pipeline::{build_synth_corpus, load_dataset, split_indices, BuildConfig, Provenance, Workspace};
use roadscope::synth::{SignalLocation, SynthConfig};

fn main() -> roadscope::Result<()> {
    let epochs = std::env::args().nth(1).map(|s| s.parse().expect("epochs")).unwrap_or(10);
    let dir = std::env::temp_dir().join("roadscope-train-tiny");
    let _ = std::fs::remove_dir_all(&dir);
    let ws = Workspace::new(&dir);

    let synth = SynthConfig {
        signal_location: SignalLocation::Both,
        n_roads: 3,
        scene_size: 2000,
        tile_size: 64,
        seed: 3,
        ..SynthConfig::default()
    };
    let prov = Provenance { config_digest: "example".into(), seed: 3 };
    let (manifest, report) = build_synth_corpus(&ws, "tiny", &synth, &BuildConfig::default(), &prov)?;
    println!("corpus: {} train / {} test tiles of {} px", report.train, report.test, synth.tile_size);

    let cfg = TrainConfig { lr: 1e-3, epochs, batch_size: 16, input_size: 32, seed: 3, ..TrainConfig::default() };
    let train = load_dataset(&manifest, &split_indices(&manifest, Split::Train), MaskMode::None, cfg.input_size)?;
    let mut model = Model::new(ModelSpec::tiny_road_net(cfg.input_size), cfg.seed)?;
    println!("TinyRoadNet at {0}x{0}: {1} parameters", cfg.input_size, model.param_count());
    fit_with(&mut model, &train, &cfg, |e| {
        println!("  epoch {:>2}  step {:>4}  loss {:.4}  accuracy {:.3}", e.epoch, e.step, e.loss, e.accuracy)
    })?;

    let path = ws.models().join("tiny.model");
    save_model(&model, &path, Some(&prov.config_digest))?;
    let (reloaded, header) = load_model(&path)?;
    assert_eq!(reloaded.param_bytes(), model.param_bytes());
    println!("saved {} (sha256 {}…)", path.display(), &header.sha256[..12]);

    let test = load_dataset(&manifest, &split_indices(&manifest, Split::Test), MaskMode::None, cfg.input_size)?;
    let row = compute_metrics("no mask", &evaluate_dataset(&reloaded, &test)?)?;
    println!("test accuracy {:.3}, macro-F1 {:.3}", row.accuracy, row.macro_f1);
    Ok(())
}
