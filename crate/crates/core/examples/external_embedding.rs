//! Train a small head on embeddings served by an external process.
//!
//! `cargo run --release --example external_embedding [backend args…]`
//!
//! Without arguments the example re-runs itself as a small texture-feature
//! backend, implementing the protocol by hand. Pass a program and its
//! arguments to use any other extractor that speaks it, for example
//! `roadscope embed-echo --dim 8`.

use std::io::{BufRead, Read, Write};
use std::time::Duration;

use roadscope::dataset_builder::Split;
use roadscope::diagnostics::{compute_metrics, evaluate_dataset};
use roadscope::maskgen::MaskMode;
use roadscope::nn::embed::{EmbedBackend, PROTOCOL};
use roadscope::nn::{fit, Dataset, Model, ModelSpec, NnError, TrainConfig};
use roadscope::pipeline::{build_synth_corpus, read_tile, split_indices, BuildConfig, Provenance, Workspace};
use roadscope::synth::{SignalLocation, SynthConfig};

const SERVE: &str = "--serve-texture";
const LAG: usize = 4;

/// Per channel: mean, and mean absolute difference at a horizontal,
/// vertical and diagonal lag.
fn texture_features(rgb: &[u8], size: usize) -> Vec<f32> {
    let px = |x: usize, y: usize, c: usize| rgb[(y * size + x) * 3 + c] as f64;
    let mut out = Vec::with_capacity(12);
    for c in 0..3 {
        let mean = (0..size * size).map(|i| rgb[i * 3 + c] as f64).sum::<f64>() / (size * size) as f64;
        out.push((mean / 255.0) as f32);
        for (dx, dy) in [(LAG, 0), (0, LAG), (LAG, LAG)] {
            let (mut sum, mut n) = (0.0, 0usize);
            for y in 0..size.saturating_sub(dy) {
                for x in 0..size.saturating_sub(dx) {
                    sum += (px(x, y, c) - px(x + dx, y + dy, c)).abs();
                    n += 1;
                }
            }
            out.push((sum / n.max(1) as f64 / 255.0) as f32);
        }
    }
    out
}

fn serve() -> std::io::Result<()> {
    let mut input = std::io::stdin().lock();
    let mut output = std::io::stdout().lock();
    writeln!(output, "{PROTOCOL} dim=12")?;
    output.flush()?;
    let mut line = String::new();
    while input.read_line(&mut line)? > 0 {
        let fields: Vec<usize> = line.split_whitespace().skip(1).filter_map(|f| f.parse().ok()).collect();
        let [size, n] = fields[..] else { break };
        let mut rgb = vec![0u8; n];
        input.read_exact(&mut rgb)?;
        output.write_all(b"VEC\n")?;
        for v in texture_features(&rgb, size) {
            output.write_all(&v.to_le_bytes())?;
        }
        output.flush()?;
        line.clear();
    }
    Ok(())
}

fn main() -> roadscope::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.first().map(String::as_str) == Some(SERVE) {
        serve().map_err(|e| roadscope::Error::Config(e.to_string()))?;
        return Ok(());
    }
    let (program, backend_args) = match args.split_first() {
        Some((p, rest)) => (p.clone(), rest.to_vec()),
        None => (std::env::current_exe().expect("own path").to_string_lossy().into_owned(), vec![SERVE.to_string()]),
    };

    let dir = std::env::temp_dir().join("roadscope-embedding");
    let _ = std::fs::remove_dir_all(&dir);
    let ws = Workspace::new(&dir);
    let synth = SynthConfig { signal_location: SignalLocation::Both, n_roads: 3, scene_size: 2000, tile_size: 64, seed: 4, ..SynthConfig::default() };
    let prov = Provenance { config_digest: "example".into(), seed: 4 };
    let (manifest, _) = build_synth_corpus(&ws, "dataset", &synth, &BuildConfig::default(), &prov)?;

    let mut backend = EmbedBackend::spawn(&program, &backend_args, Duration::from_secs(30))?;
    println!("backend {program} serves {}-dimensional embeddings", backend.dim());
    let embed = |backend: &mut EmbedBackend, split: Split| -> roadscope::Result<Dataset> {
        let mut d = Dataset::new(backend.dim());
        for i in split_indices(&manifest, split) {
            let (px, size, _) = read_tile(&manifest, i, MaskMode::None)?;
            d.push(&backend.embed(size, &px)?, manifest.entries[i].class.index());
        }
        Ok(d)
    };
    let train = embed(&mut backend, Split::Train)?;
    let test = embed(&mut backend, Split::Test)?;

    let mut head = Model::new(ModelSpec::embedding_head(backend.dim(), 64), 4)?;
    let cfg = TrainConfig { lr: 1e-2, epochs: 300, batch_size: 32, seed: 4, ..TrainConfig::default() };
    let log = fit(&mut head, &train, &cfg)?;
    let row = compute_metrics("no mask", &evaluate_dataset(&head, &test)?)?;
    println!(
        "head trained on {} embeddings: final training accuracy {:.3}, test accuracy {:.3}",
        train.len(),
        log.final_accuracy().unwrap_or(0.0),
        row.accuracy
    );

    drop(backend);
    let mut short = EmbedBackend::spawn("/nonexistent/backend", &[], Duration::from_secs(1));
    if let Err(NnError::BackendUnavailable { message, .. }) = &mut short {
        println!("missing backend reported as unavailable: {message}");
    }
    Ok(())
}
