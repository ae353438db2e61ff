//! Train in one synthetic country, test in another.
//!
//! `cargo run --release --example transfer_experiment [road|context] [epochs]`
//!
//! The two countries share their class signal but differ in palette and
//! context texture, so a context-located signal transfers poorly.

use roadscope::diagnostics::{render_report, run_transfer_experiment, ReportFormat, ReportMeta};
use roadscope::nn::{ModelSpec, TrainConfig};
use roadscope::pipeline::{build_synth_corpus, BuildConfig, Provenance, Workspace};
use roadscope::synth::{SignalLocation, SynthConfig};

fn main() -> roadscope::Result<()> {
    let mut args = std::env::args().skip(1);
    let signal: SignalLocation = args.next().map(|s| s.parse().expect("signal")).unwrap_or(SignalLocation::Context);
    let epochs: usize = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(20);

    let dir = std::env::temp_dir().join("roadscope-transfer");
    let _ = std::fs::remove_dir_all(&dir);
    let ws = Workspace::new(&dir);
    let prov = Provenance { config_digest: "example".into(), seed: 1 };
    let base = SynthConfig { signal_location: signal, seed: 1, ..SynthConfig::default() };
    let a = SynthConfig { country: "AA".into(), country_style: 0, ..base.clone() };
    let b = SynthConfig { country: "BB".into(), country_style: 1, ..base };
    let (ma, _) = build_synth_corpus(&ws, "AA", &a, &BuildConfig::default(), &prov)?;
    let (mb, _) = build_synth_corpus(&ws, "BB", &b, &BuildConfig::default(), &prov)?;

    let train = TrainConfig { lr: 1e-3, epochs, seed: 1, ..TrainConfig::default() };
    let runs = run_transfer_experiment(&ma, &mb, &ModelSpec::tiny_road_net(128), &train, |run| {
        let (own, other) = (run.rows[0].accuracy, run.rows[1].accuracy);
        println!("{}: in-domain {own:.3}, cross-domain {other:.3}, gap {:.1} points", run.label, (own - other) * 100.0);
    })?;
    let rows: Vec<_> = runs.iter().flat_map(|r| r.rows.clone()).collect();
    let meta = ReportMeta {
        title: format!("Cross-country transfer, {} signal", signal.as_str()),
        config_digest: prov.config_digest.clone(),
        seed: prov.seed,
        notes: vec![],
    };
    println!("\n{}", render_report(&rows, ReportFormat::Markdown, &meta)?);
    Ok(())
}
