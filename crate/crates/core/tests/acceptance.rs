//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). The synthetic experiments
//! train ten TinyRoadNet models and take several minutes in release mode;
//! the masking models are reused by the CAM locality check.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadscope::dataset_builder::{balance, read_manifest, split, write_manifest, ManifestEntry, ManifestHeader, Split};
use roadscope::diagnostics::{cam, cam_locality, cam_raw, resize_mask, run_masking_experiment, run_transfer_experiment, Run};
use roadscope::maskgen::{apply_mask, bresenham, dilate, read_mask_png, Mask, MaskMode};
use roadscope::nn::embed::{echo_embedding, EmbedBackend};
use roadscope::nn::io::{decode_model, encode_model, MODEL_SCHEMA_VERSION};
use roadscope::nn::{adam_step, fit, AdamConfig, AdamState, InputSpec, LayerSpec, Model, ModelSpec, NnError, Tensor, TrainConfig};
use roadscope::pipeline::{build_synth_corpus, load_input, split_indices, BuildConfig, Provenance, Workspace};
use roadscope::raster_store::{open_scene, write_scene, Scene, SceneError};
use roadscope::synth::{SignalLocation, SynthConfig};
use roadscope::{GeoPoint, RoadClass};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, f: impl FnOnce() -> Check) {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS {id:>2} {name}: {d} [{secs:.1} s]"),
        Err(d) => println!("FAIL {id:>2} {name}: {d} [{secs:.1} s]"),
    }
    results.push(outcome.is_ok());
}

// 1 ---------------------------------------------------------------------

/// Nearest ideal minor coordinate for every major index, ties to the lower.
fn bresenham_oracle(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let x_major = dx.abs() >= dy.abs();
    let (u0, v0, u1, v1) = if x_major { (a.0, a.1, b.0, b.1) } else { (a.1, a.0, b.1, b.0) };
    let (du, dv) = (u1 - u0, v1 - v0);
    let step = if du >= 0 { 1 } else { -1 };
    let mut out = Vec::new();
    let mut u = u0;
    loop {
        let v = if du == 0 {
            v0
        } else {
            // ideal v = t / den; nearest integer with ties going down is ceil(t/den - 1/2).
            let (mut t, mut den) = (v0 * du + (u - u0) * dv, du);
            if den < 0 {
                t = -t;
                den = -den;
            }
            -((-(2 * t - den)).div_euclid(2 * den))
        };
        out.push(if x_major { (u, v) } else { (v, u) });
        if u == u1 {
            break;
        }
        u += step;
    }
    out
}

fn criterion_bresenham() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = Instant::now();
    for _ in 0..1000 {
        let mut p = || (rng.random_range(0..64), rng.random_range(0..64));
        let (a, b) = (p(), p());
        let got = bresenham(a, b);
        ensure(got == bresenham_oracle(a, b), format!("segment {a:?} -> {b:?}: {got:?}"))?;
    }
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(1), format!("took {dt:?}"))?;
    Ok(format!("1000 segments exact, {:.1} ms", dt.as_secs_f64() * 1e3))
}

// 2 ---------------------------------------------------------------------

fn random_mask(rng: &mut ChaCha8Rng, size: usize, density: f64) -> Mask {
    let mut m = Mask::square(size);
    for y in 0..size {
        for x in 0..size {
            if rng.random_bool(density) {
                m.set(x, y);
            }
        }
    }
    m
}

fn criterion_dilation() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = Instant::now();
    for k in 0..100 {
        let m = random_mask(&mut rng, 64, 0.02);
        let r = (k % 6) as i64;
        let got = dilate(&m, r as u32);
        let set: Vec<(i64, i64)> =
            (0..64).flat_map(|y| (0..64).map(move |x| (x, y))).filter(|&(x, y)| m.get(x as usize, y as usize)).collect();
        for y in 0..64i64 {
            for x in 0..64i64 {
                let want = set.iter().any(|&(sx, sy)| (x - sx).pow(2) + (y - sy).pow(2) <= r * r);
                ensure(got.get(x as usize, y as usize) == want, format!("mask {k}, radius {r}, pixel ({x}, {y})"))?;
            }
        }
    }
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(10), format!("took {dt:?}"))?;
    Ok(format!("100 masks, radii 0-5 exact, {:.2} s", dt.as_secs_f64()))
}

// 3 ---------------------------------------------------------------------

fn criterion_partition() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..100 {
        let size = rng.random_range(1..48);
        let tile: Vec<u8> = (0..size * size * 3).map(|_| rng.random()).collect();
        let density = rng.random_range(0.0..1.0);
        let mask = random_mask(&mut rng, size, density);
        let road = apply_mask(&tile, size, &mask, MaskMode::RoadOnly).map_err(|e| e.to_string())?;
        let context = apply_mask(&tile, size, &mask, MaskMode::ContextOnly).map_err(|e| e.to_string())?;
        let sum: Vec<u8> = road.iter().zip(&context).map(|(a, b)| a + b).collect();
        ensure(sum == tile, format!("pair {k} ({size} px) does not reconstruct"))?;
    }
    Ok("100 tile/mask pairs reconstruct byte-exactly".into())
}

// 4 ---------------------------------------------------------------------

fn criterion_gradients() -> Check {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for (i, (spec, shape)) in common::layer_cases().into_iter().enumerate() {
        for n in [1, 2] {
            let (err, detail) = common::check_layer(spec, shape, n, 100 + i as u64);
            ensure(err < 1e-3, format!("{spec:?}: {detail:?}"))?;
            worst = worst.max(err);
        }
    }
    let head = Model::new(ModelSpec::embedding_head(6, 5), 3).map_err(|e| e.to_string())?;
    let err = common::check_model(&head, 4, common::FD_STEP, 9);
    ensure(err < 1e-3, format!("two-layer head: {err:e}"))?;
    worst = worst.max(err);
    let dt = t.elapsed();
    ensure(dt < Duration::from_secs(30), format!("took {dt:?}"))?;
    Ok(format!("7 layer types and a two-layer model, worst relative error {worst:.2e}"))
}

// 5 ---------------------------------------------------------------------

fn criterion_adam() -> Check {
    let cfg = AdamConfig::default();
    let mut p = Tensor::zeros(&[1]);
    let g = Tensor::from_vec(&[1], vec![1.0]);
    let mut state = AdamState::new([&p]);
    adam_step(&mut [&mut p], &[g], &mut state, &cfg);
    let got = p.data()[0] as f64;
    let want = -9.9999999e-5;
    ensure((got - want).abs() <= 1e-10, format!("first step {got:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for k in 0..100 {
        let len = rng.random_range(1..20);
        let data: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut p = Tensor::from_vec(&[len], data);
        let mut state = AdamState::new([&p]);
        for _ in 0..rng.random_range(0..5) {
            let g: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            adam_step(&mut [&mut p], &[Tensor::from_vec(&[len], g)], &mut state, &cfg);
        }
        let (before_p, before_s) = (p.clone(), state.clone());
        adam_step(&mut [&mut p], &[Tensor::zeros(&[len])], &mut state, &cfg);
        ensure(p == before_p && state == before_s, format!("state {k} changed under a zero gradient"))?;
    }
    Ok(format!("first step {got:.10e}; 100 zero-gradient no-ops"))
}

// 6 ---------------------------------------------------------------------

fn entry(i: usize, class: RoadClass) -> ManifestEntry {
    ManifestEntry {
        tile_path: format!("tiles/t{i:05}.png"),
        mask_path: None,
        class,
        country: "AA".into(),
        road_id: format!("r{}", i % 97),
        center: GeoPoint::new(36.8 + i as f64 * 1e-5, -1.28).unwrap(),
        split: Split::None,
        mask_mode: MaskMode::None,
    }
}

fn criterion_dataset() -> Check {
    let class_of = |i: usize| RoadClass::ALL[usize::from(i % 19 >= 6) + usize::from(i % 19 >= 13)];
    let raw: Vec<ManifestEntry> = (0..18_000).map(|i| entry(i, class_of(i))).collect();
    let balanced = balance(raw.clone(), 5_000, 9).map_err(|e| e.to_string())?;
    for c in RoadClass::ALL {
        let n = balanced.iter().filter(|e| e.class == c).count();
        ensure(n == 5_000, format!("{c}: {n} entries"))?;
    }
    ensure(balanced == balance(raw, 5_000, 9).unwrap(), "balance is not deterministic")?;
    let (train, test) = split(balanced.clone(), 0.1, 9).map_err(|e| e.to_string())?;
    ensure(train.len() == 13_500 && test.len() == 1_500, format!("{} / {}", train.len(), test.len()))?;
    let train_paths: std::collections::HashSet<_> = train.iter().map(|e| &e.tile_path).collect();
    ensure(test.iter().all(|e| !train_paths.contains(&e.tile_path)), "train and test overlap")?;
    for c in RoadClass::ALL {
        ensure(test.iter().filter(|e| e.class == c).count() == 500, format!("{c} test share"))?;
    }
    ensure((train.clone(), test.clone()) == split(balanced, 0.1, 9).unwrap(), "split is not deterministic")?;
    Ok("5000 per class; 13500 train / 1500 test, disjoint, stratified, deterministic".into())
}

// 7-9 -------------------------------------------------------------------

const TRAIN_LR: f64 = 1e-3;

fn train_config() -> TrainConfig {
    TrainConfig { lr: TRAIN_LR, seed: 1, ..TrainConfig::default() }
}

fn synth_config(signal: SignalLocation, country: &str, style: u32) -> SynthConfig {
    SynthConfig { signal_location: signal, country: country.into(), country_style: style, seed: 1, ..SynthConfig::default() }
}

struct Corpus {
    manifest: roadscope::dataset_builder::Manifest,
}

fn corpus(root: &Path, name: &str, synth: &SynthConfig) -> Corpus {
    let ws = Workspace::new(root.join(name));
    let prov = Provenance { config_digest: "acceptance".into(), seed: synth.seed };
    let (manifest, _) = build_synth_corpus(&ws, name, synth, &BuildConfig::default(), &prov).expect("synthetic corpus builds");
    Corpus { manifest }
}

fn accuracy_of(runs: &[Run], mode: MaskMode) -> f64 {
    runs.iter().find(|r| r.mode == mode).expect("scenario ran").rows[0].accuracy
}

struct Masking {
    runs: Vec<Run>,
    secs: Vec<f64>,
    corpus: Corpus,
}

fn masking(root: &Path, signal: SignalLocation) -> Masking {
    let corpus = corpus(root, &format!("mask-{}", signal.as_str()), &synth_config(signal, "AA", 0));
    let spec = ModelSpec::tiny_road_net(128);
    let mut secs = Vec::new();
    let mut t = Instant::now();
    let runs = run_masking_experiment(&corpus.manifest, &spec, &train_config(), |r| {
        secs.push(t.elapsed().as_secs_f64());
        t = Instant::now();
        eprintln!("  [{}] {}: accuracy {:.3}", signal.as_str(), r.label, r.rows[0].accuracy);
    })
    .expect("masking experiment runs");
    Masking { runs, secs, corpus }
}

fn criterion_masking(ctx: &Masking, road: &Masking) -> Check {
    let n_train = split_indices(&ctx.corpus.manifest, Split::Train).len();
    let mut lines = Vec::new();
    for (m, signal) in [(ctx, "context"), (road, "road")] {
        let road_occ = accuracy_of(&m.runs, MaskMode::ContextOnly);
        let ctx_occ = accuracy_of(&m.runs, MaskMode::RoadOnly);
        let (kept, hidden) = if signal == "context" { (road_occ, ctx_occ) } else { (ctx_occ, road_occ) };
        lines.push(format!(
            "{signal} signal: road occluded {road_occ:.3}, context occluded {ctx_occ:.3}, no mask {:.3}",
            accuracy_of(&m.runs, MaskMode::None)
        ));
        ensure(kept >= 0.90 && hidden <= 0.45, lines.join("; "))?;
        let slowest = m.secs.iter().copied().fold(0.0, f64::max);
        ensure(slowest < 600.0, format!("{signal} run took {slowest:.0} s"))?;
    }
    let slowest = ctx.secs.iter().chain(&road.secs).copied().fold(0.0, f64::max);
    Ok(format!("{}; {n_train} train tiles, slowest run {slowest:.0} s", lines.join("; ")))
}

fn transfer_gaps(root: &Path, signal: SignalLocation) -> (f64, f64, String) {
    let a = corpus(root, &format!("xfer-{}-aa", signal.as_str()), &synth_config(signal, "AA", 0));
    let b = corpus(root, &format!("xfer-{}-bb", signal.as_str()), &synth_config(signal, "BB", 1));
    let runs = run_transfer_experiment(&a.manifest, &b.manifest, &ModelSpec::tiny_road_net(128), &train_config(), |r| {
        eprintln!("  [{}] {}: {:?}", signal.as_str(), r.label, r.rows.iter().map(|x| x.accuracy).collect::<Vec<_>>());
    })
    .expect("transfer experiment runs");
    let gap = |r: &Run| r.rows[0].accuracy - r.rows[1].accuracy;
    let detail = runs
        .iter()
        .flat_map(|r| r.rows.iter().map(|x| format!("{} {:.3}", x.scenario, x.accuracy)))
        .collect::<Vec<_>>()
        .join(", ");
    (gap(&runs[0]), gap(&runs[1]), detail)
}

fn criterion_transfer(root: &Path) -> Check {
    let (c1, c2, cd) = transfer_gaps(root, SignalLocation::Context);
    let (r1, r2, rd) = transfer_gaps(root, SignalLocation::Road);
    let detail = format!(
        "context gaps {:.1}/{:.1} pts ({cd}); road gaps {:.1}/{:.1} pts ({rd})",
        c1 * 100.0,
        c2 * 100.0,
        r1 * 100.0,
        r2 * 100.0
    );
    ensure(c1 >= 0.20 && c2 >= 0.20 && r1.abs() < 0.10 && r2.abs() < 0.10, detail.clone())?;
    Ok(detail)
}

/// GAP → Dense → Softmax straight on a `c`-channel input.
fn bare_cam_model(c: usize, size: usize, dense: Vec<f32>, bias: Vec<f32>) -> Model {
    let spec = ModelSpec {
        input: InputSpec::Image { channels: c, size },
        layers: vec![LayerSpec::GlobalAvgPool, LayerSpec::Dense { out: 3 }, LayerSpec::Softmax],
    };
    let mut flat = dense;
    flat.extend(bias);
    Model::from_params(spec, 0, &flat).expect("hand-built model")
}

fn mean_locality(m: &Masking) -> Result<(f64, usize), String> {
    let model = &m.runs.iter().find(|r| r.mode == MaskMode::None).unwrap().model;
    let manifest = &m.corpus.manifest;
    let (mut sum, mut n) = (0.0, 0);
    for i in split_indices(manifest, Split::Test) {
        let x = load_input(manifest, i, MaskMode::None, 128).map_err(|e| e.to_string())?;
        let pred = model.predict(&x, 1).map_err(|e| e.to_string())?[0];
        let e = &manifest.entries[i];
        if pred != e.class.index() {
            continue;
        }
        let heat = cam(model, &x, e.class).map_err(|e| e.to_string())?;
        let mask = read_mask_png(&manifest.resolve(e.mask_path.as_deref().ok_or("entry without mask")?)).map_err(|e| e.to_string())?;
        sum += cam_locality(&heat.upsampled, &resize_mask(&mask, heat.size)).map_err(|e| e.to_string())?;
        n += 1;
    }
    ensure(n > 0, "no correctly classified test tiles")?;
    Ok((sum / n as f64, n))
}

fn criterion_cam(ctx: &Masking, road: &Masking) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (c, size) = (4, 6);
    let x: Vec<f32> = (0..c * size * size).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w1: Vec<f32> = (0..3 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w2: Vec<f32> = (0..3 * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (a, b) = (0.75f32, -1.5f32);
    let mixed: Vec<f32> = w1.iter().zip(&w2).map(|(p, q)| a * p + b * q).collect();
    let bias = vec![0.3, -0.2, 0.1];
    for class in RoadClass::ALL {
        let raw = |w: &[f32]| cam_raw(&bare_cam_model(c, size, w.to_vec(), bias.clone()), &x, class).unwrap().0;
        let (r1, r2, rm) = (raw(&w1), raw(&w2), raw(&mixed));
        for ((p, q), m) in r1.iter().zip(&r2).zip(&rm) {
            ensure((a * p + b * q - m).abs() < 1e-5, format!("linearity fails for {class}"))?;
        }
        // GAP identity: the map's mean plus the bias is the class logit.
        let model = bare_cam_model(c, size, w1.clone(), bias.clone());
        let mean = r1.iter().map(|&v| v as f64).sum::<f64>() / r1.len() as f64;
        let fwd = model.forward_cached(&x, 1).unwrap();
        let logit = fwd.acts[1][class.index()] as f64;
        ensure((mean + bias[class.index()] as f64 - logit).abs() < 1e-5, format!("GAP identity fails for {class}"))?;
    }
    // A single feature map with unit weight is its own activation map.
    let single: Vec<f32> = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
    let one = bare_cam_model(1, size, vec![1.0, 1.0, 1.0], vec![0.0; 3]);
    ensure(cam_raw(&one, &single, RoadClass::Minor).unwrap().0 == single, "single-map identity fails")?;

    let (road_loc, rn) = mean_locality(road)?;
    let (ctx_loc, cn) = mean_locality(ctx)?;
    let detail = format!(
        "linearity and identity exact; locality road model {road_loc:.3} over {rn} tiles, context model {ctx_loc:.3} over {cn} tiles"
    );
    ensure(road_loc >= 0.6 && ctx_loc <= 0.4, detail.clone())?;
    Ok(detail)
}

// 10 --------------------------------------------------------------------

fn criterion_overfit() -> Check {
    let cfg = TrainConfig { batch_size: 1, seed: 4, ..TrainConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut data = roadscope::nn::Dataset::new(3 * 128 * 128);
    let x: Vec<f32> = (0..3 * 128 * 128).map(|_| rng.random_range(0.0..1.0)).collect();
    data.push(&x, 2);
    let mut model = Model::new(ModelSpec::tiny_road_net(128), cfg.seed).unwrap();
    let log = fit(&mut model, &data, &TrainConfig { epochs: 200, ..cfg.clone() }).unwrap();
    let reached = log
        .epochs
        .iter()
        .find(|e| e.accuracy == 1.0)
        .map(|e| e.epoch + 1)
        .ok_or("training accuracy stayed below 1.0 for 200 epochs")?;
    ensure(model.predict(&x, 1).unwrap()[0] == 2, "final model misclassifies its only sample")?;

    let mut small = roadscope::nn::Dataset::new(3 * 32 * 32);
    for i in 0..24 {
        let v: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.random_range(0.0..1.0)).collect();
        small.push(&v, i % 3);
    }
    let det = TrainConfig { epochs: 3, batch_size: 8, input_size: 32, seed: 6, ..TrainConfig::default() };
    let run = || {
        let mut m = Model::new(ModelSpec::tiny_road_net(32), det.seed).unwrap();
        let log = fit(&mut m, &small, &det).unwrap();
        (m.param_bytes(), log)
    };
    let (p1, l1) = run();
    let (p2, l2) = run();
    ensure(p1 == p2 && l1 == l2, "two runs with one seed differ")?;
    Ok(format!("single sample fitted after {reached} epoch(s); repeated runs bitwise identical"))
}

// 11 --------------------------------------------------------------------

fn criterion_formats() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // Scene container.
    let px: Vec<u8> = (0..40 * 30 * 3).map(|_| rng.random()).collect();
    let scene = Scene::new("s1", 40, 30, GeoPoint::new(36.8, -1.28).unwrap(), 0.3, "AA", px).unwrap();
    let sdir = dir.path().join("s1");
    write_scene(&sdir, &scene).unwrap();
    ensure(open_scene(&sdir).unwrap() == scene, "scene round-trip differs")?;
    let pix = sdir.join("pixels.rgb");
    let mut bytes = std::fs::read(&pix).unwrap();
    bytes[17] ^= 0x40;
    std::fs::write(&pix, &bytes).unwrap();
    ensure(matches!(open_scene(&sdir), Err(SceneError::DigestMismatch { .. })), "scene bit flip undetected")?;
    std::fs::write(&pix, &bytes[..bytes.len() - 1]).unwrap();
    ensure(matches!(open_scene(&sdir), Err(SceneError::SizeMismatch { .. })), "scene truncation undetected")?;

    // Manifest JSONL.
    let entries: Vec<ManifestEntry> = (0..30).map(|i| entry(i, RoadClass::ALL[i % 3])).collect();
    let mpath = dir.path().join("m.jsonl");
    let header = ManifestHeader::new(5, "digest");
    write_manifest(&mpath, &header, &entries).unwrap();
    let back = read_manifest(&mpath).unwrap();
    ensure(back.entries == entries && back.header.as_ref() == Some(&header), "manifest round-trip differs")?;
    let text = std::fs::read_to_string(&mpath).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replace("\"class\"", "\"klass\"");
    std::fs::write(&mpath, lines.join("\n")).unwrap();
    let err = read_manifest(&mpath).unwrap_err().to_string();
    ensure(err.contains(":5:"), format!("manifest error lacks the line number: {err}"))?;

    // Model file.
    let model = Model::new(ModelSpec::tiny_road_net(16), 3).unwrap();
    let enc = encode_model(&model, Some("digest"));
    ensure(decode_model(&enc).unwrap().0 == model, "model round-trip differs")?;
    let mut flipped = enc.clone();
    let k = flipped.len() - 10;
    flipped[k] ^= 1;
    ensure(matches!(decode_model(&flipped), Err(NnError::DigestMismatch { .. })), "model bit flip undetected")?;
    ensure(
        matches!(decode_model(&enc[..enc.len() - 4]), Err(NnError::DigestMismatch { .. })),
        "model truncation undetected",
    )?;
    let old = String::from_utf8_lossy(&enc).replacen(
        &format!("\"schema_version\":{MODEL_SCHEMA_VERSION}"),
        "\"schema_version\":0",
        1,
    );
    ensure(
        matches!(decode_model(old.as_bytes()), Err(NnError::VersionMismatch { found: 0, expected: MODEL_SCHEMA_VERSION })),
        "old model schema accepted",
    )?;

    // External embedding protocol against the echo backend.
    let exe = env!("CARGO_BIN_EXE_roadscope");
    let args = |extra: &[&str]| -> Vec<String> {
        ["embed-echo", "--dim", "5"].iter().chain(extra).map(|s| s.to_string()).collect()
    };
    let timeout = Duration::from_secs(20);
    let mut backend = EmbedBackend::spawn(exe, &args(&[]), timeout).map_err(|e| e.to_string())?;
    ensure(backend.dim() == 5, "handshake dimension")?;
    for size in [1usize, 7, 32] {
        let rgb: Vec<u8> = (0..size * size * 3).map(|_| rng.random()).collect();
        let v = backend.embed(size, &rgb).map_err(|e| e.to_string())?;
        ensure(v == echo_embedding(&rgb, 5), format!("embedding of a {size}px tile differs"))?;
    }
    let tile = vec![9u8; 4 * 4 * 3];
    let mut short = EmbedBackend::spawn(exe, &args(&["--short-by", "2"]), timeout).unwrap();
    ensure(
        matches!(short.embed(4, &tile), Err(NnError::DimensionMismatch { expected: 5, got: 3 })),
        "short vector undetected",
    )?;
    let mut dying = EmbedBackend::spawn(exe, &args(&["--exit-after", "2"]), timeout).unwrap();
    dying.embed(4, &tile).unwrap();
    dying.embed(4, &tile).unwrap();
    ensure(
        matches!(dying.embed(4, &tile), Err(NnError::BackendUnavailable { last_good: Some(1), .. })),
        "backend exit undetected",
    )?;
    Ok("scene, manifest, model and embedding protocol round-trip; corruption detected".into())
}

fn main() {
    let mut results = Vec::new();
    report(&mut results, 1, "Bresenham oracle", criterion_bresenham);
    report(&mut results, 2, "Dilation oracle", criterion_dilation);
    report(&mut results, 3, "Mask partition identity", criterion_partition);
    report(&mut results, 4, "Gradient check", criterion_gradients);
    report(&mut results, 5, "Adam first step", criterion_adam);
    report(&mut results, 6, "Dataset invariants", criterion_dataset);

    let root = tempfile::tempdir().expect("temp dir");
    let t = Instant::now();
    eprintln!("training masking models (context and road signal)...");
    let experiments = catch_unwind(AssertUnwindSafe(|| {
        (masking(root.path(), SignalLocation::Context), masking(root.path(), SignalLocation::Road))
    }));
    eprintln!("masking models trained in {:.0} s", t.elapsed().as_secs_f64());
    match &experiments {
        Ok((ctx, road)) => {
            report(&mut results, 7, "Synthetic masking diagnosis", || criterion_masking(ctx, road));
            report(&mut results, 8, "Synthetic transfer gap", || criterion_transfer(root.path()));
            report(&mut results, 9, "CAM correctness", || criterion_cam(ctx, road));
        }
        Err(_) => {
            for (id, name) in [(7, "Synthetic masking diagnosis"), (9, "CAM correctness")] {
                report(&mut results, id, name, || Err("masking experiment failed".into()));
            }
            report(&mut results, 8, "Synthetic transfer gap", || criterion_transfer(root.path()));
        }
    }
    report(&mut results, 10, "Overfit sanity and determinism", criterion_overfit);
    report(&mut results, 11, "Format round-trips", criterion_formats);

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
