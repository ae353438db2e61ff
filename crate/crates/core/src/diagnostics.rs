//! Metrics, evaluation, the masking and cross-domain experiments, class
//! activation maps, and report rendering.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset_builder::{Manifest, Split};
use crate::maskgen::{Mask, MaskMode};
use crate::nn::model::NUM_CLASSES;
use crate::nn::{fit, InputSpec, LayerSpec, Model, ModelSpec, NnError, Shape, TrainConfig, TrainLog};
use crate::nn::Dataset;
use crate::osm_ingest::RoadClass;
use crate::pipeline::{load_dataset, split_indices};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("architecture unsupported: {0}")]
    ArchitectureUnsupported(String),
    #[error("heatmap is {heat} pixels, mask is {width}x{height}")]
    SizeMismatch { heat: usize, width: usize, height: usize },
    #[error("a report needs at least one row")]
    EmptyReport,
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (t, p) in pairs {
            cm.counts[t][p] += 1;
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Indexed by [`RoadClass::index`].
    pub per_class: [ClassMetrics; NUM_CLASSES],
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and macro-F1; `0/0` counts as 0.
pub fn compute_metrics(scenario: &str, cm: &ConfusionMatrix) -> Result<MetricsRow, DiagnosticsError> {
    let total = cm.total();
    if total == 0 {
        return Err(DiagnosticsError::EmptyMatrix);
    }
    let mut per_class = [ClassMetrics::default(); NUM_CLASSES];
    for (c, m) in per_class.iter_mut().enumerate() {
        let tp = cm.counts[c][c];
        let predicted: u64 = (0..NUM_CLASSES).map(|t| cm.counts[t][c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        *m = ClassMetrics { precision: p, recall: r, f1 };
    }
    Ok(MetricsRow {
        scenario: scenario.to_string(),
        n: total,
        accuracy: ratio(cm.trace(), total),
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_CLASSES as f64,
        per_class,
    })
}

/// Anything that maps one input sample to a class index.
pub trait Classifier: Sync {
    fn classify(&self, x: &[f32]) -> Result<usize, NnError>;
}

impl Classifier for Model {
    fn classify(&self, x: &[f32]) -> Result<usize, NnError> {
        Ok(self.predict(x, 1)?[0])
    }
}

/// Confusion matrix over a preloaded set; samples are scored in parallel
/// and merged in input order.
pub fn evaluate_dataset(model: &dyn Classifier, data: &Dataset) -> Result<ConfusionMatrix, NnError> {
    let preds: Vec<usize> = (0..data.len())
        .into_par_iter()
        .map(|i| model.classify(data.sample(i)))
        .collect::<Result<_, _>>()?;
    Ok(ConfusionMatrix::from_pairs(data.labels.iter().copied().zip(preds)))
}

/// Loads the `split` entries of `manifest`, masked per `mode`, and scores them.
pub fn evaluate(model: &Model, manifest: &Manifest, split: Split, mode: MaskMode) -> crate::Result<ConfusionMatrix> {
    let input = image_input_size(model)?;
    let data = load_dataset(manifest, &split_indices(manifest, split), mode, input)?;
    Ok(evaluate_dataset(model, &data)?)
}

fn image_input_size(model: &Model) -> Result<usize, DiagnosticsError> {
    match model.spec.input {
        InputSpec::Image { size, .. } => Ok(size),
        InputSpec::Vector { .. } => Err(DiagnosticsError::ArchitectureUnsupported(
            "model takes embeddings, not image tiles".into(),
        )),
    }
}

/// One training run of an experiment.
#[derive(Debug, Clone)]
pub struct Run {
    pub label: String,
    pub mode: MaskMode,
    pub init_digest: String,
    pub final_digest: String,
    pub log: TrainLog,
    pub model: Model,
    pub rows: Vec<MetricsRow>,
}

/// Three runs from the same seed, init and data order; each is trained and
/// tested on tiles masked the same way.
pub fn run_masking_experiment(
    manifest: &Manifest,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut on_run: impl FnMut(&Run),
) -> crate::Result<Vec<Run>> {
    let train_idx = split_indices(manifest, Split::Train);
    let test_idx = split_indices(manifest, Split::Test);
    let mut runs = Vec::new();
    for mode in MaskMode::ALL {
        let train = load_dataset(manifest, &train_idx, mode, cfg.input_size)?;
        let mut model = Model::new(spec.clone(), cfg.seed)?;
        let init_digest = model.param_digest();
        let log = fit(&mut model, &train, cfg)?;
        drop(train);
        let test = load_dataset(manifest, &test_idx, mode, cfg.input_size)?;
        let row = compute_metrics(mode.scenario(), &evaluate_dataset(&model, &test)?)?;
        let run = Run {
            label: mode.scenario().to_string(),
            mode,
            init_digest,
            final_digest: model.param_digest(),
            log,
            model,
            rows: vec![row],
        };
        on_run(&run);
        runs.push(run);
    }
    Ok(runs)
}

fn country_of(m: &Manifest) -> String {
    m.entries.first().map(|e| e.country.clone()).unwrap_or_else(|| "?".into())
}

/// Train on each manifest's train split; test on both test splits.
/// Rows come out as A→A, A→B, B→B, B→A.
pub fn run_transfer_experiment(
    a: &Manifest,
    b: &Manifest,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut on_run: impl FnMut(&Run),
) -> crate::Result<Vec<Run>> {
    let mut runs = Vec::new();
    for (src, dst) in [(a, b), (b, a)] {
        let (cs, cd) = (country_of(src), country_of(dst));
        let train = load_dataset(src, &split_indices(src, Split::Train), MaskMode::None, cfg.input_size)?;
        let mut model = Model::new(spec.clone(), cfg.seed)?;
        let init_digest = model.param_digest();
        let log = fit(&mut model, &train, cfg)?;
        drop(train);
        let mut rows = Vec::new();
        for (m, c) in [(src, &cs), (dst, &cd)] {
            let test = load_dataset(m, &split_indices(m, Split::Test), MaskMode::None, cfg.input_size)?;
            rows.push(compute_metrics(&format!("train {cs}, test {c}"), &evaluate_dataset(&model, &test)?)?);
        }
        let run = Run {
            label: format!("train {cs}"),
            mode: MaskMode::None,
            init_digest,
            final_digest: model.param_digest(),
            log,
            model,
            rows,
        };
        on_run(&run);
        runs.push(run);
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamHeatmap {
    pub class: RoadClass,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Feature-map resolution, normalized to `[0, 1]`.
    pub grid: Vec<f32>,
    pub size: usize,
    /// Bilinear upsampling of `grid` to `size × size`.
    pub upsampled: Vec<f32>,
}

/// Checks the GAP → Dense(3) → Softmax tail and returns the index of the
/// layer whose output feeds GAP (`None` when GAP reads the model input).
fn cam_feature_layer(model: &Model) -> Result<Option<usize>, DiagnosticsError> {
    let n = model.layers.len();
    let ok = n >= 3
        && model.layers[n - 3].spec == LayerSpec::GlobalAvgPool
        && matches!(model.layers[n - 2].spec, LayerSpec::Dense { out: NUM_CLASSES })
        && model.layers[n - 1].spec == LayerSpec::Softmax;
    if !ok || matches!(model.spec.input, InputSpec::Vector { .. }) {
        return Err(DiagnosticsError::ArchitectureUnsupported(
            "class activation maps need an image model ending GlobalAvgPool, Dense(3), Softmax".into(),
        ));
    }
    Ok((n - 3).checked_sub(1))
}

/// Unnormalized `Σ_k w[c][k] · F_k(y, x)` at feature-map resolution.
pub fn cam_raw(model: &Model, x: &[f32], class: RoadClass) -> crate::Result<(Vec<f32>, usize, usize)> {
    let feat_layer = cam_feature_layer(model)?;
    let fwd = model.forward_cached(x, 1)?;
    let (features, shape) = match feat_layer {
        Some(i) => (&fwd.acts[i][..], model.layers[i].output),
        None => (x, model.input_shape()),
    };
    let Shape::Image { c: k, h, w } = shape else {
        return Err(DiagnosticsError::ArchitectureUnsupported("GAP input is not spatial".into()).into());
    };
    let dense = &model.layers[model.layers.len() - 2].params[0];
    let wc = &dense.data()[class.index() * k..(class.index() + 1) * k];
    let hw = h * w;
    let mut out = vec![0.0f32; hw];
    for (p, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for (ch, &wk) in wc.iter().enumerate() {
            acc += wk as f64 * features[ch * hw + p] as f64;
        }
        *o = acc as f32;
    }
    Ok((out, h, w))
}

/// Min-max normalization to `[0, 1]`; flat maps become all zeros.
pub fn normalize(v: &[f32]) -> Vec<f32> {
    let lo = v.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = v.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Bilinear resize with pixel centers aligned (edges clamped).
pub fn upsample_bilinear(grid: &[f32], gh: usize, gw: usize, oh: usize, ow: usize) -> Vec<f32> {
    let src = |o: usize, n_out: usize, n_in: usize| {
        let s = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = vec![0.0f32; oh * ow];
    for y in 0..oh {
        let (y0, y1, fy) = src(y, oh, gh);
        for x in 0..ow {
            let (x0, x1, fx) = src(x, ow, gw);
            let g = |yy: usize, xx: usize| grid[yy * gw + xx] as f64;
            let top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
            let bot = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
            out[y * ow + x] = (top * (1.0 - fy) + bot * fy) as f32;
        }
    }
    out
}

pub fn cam(model: &Model, x: &[f32], class: RoadClass) -> crate::Result<CamHeatmap> {
    let size = image_input_size(model)?;
    let (raw, gh, gw) = cam_raw(model, x, class)?;
    let grid = normalize(&raw);
    let upsampled = upsample_bilinear(&grid, gh, gw, size, size);
    Ok(CamHeatmap { class, grid_h: gh, grid_w: gw, grid, size, upsampled })
}

/// Share of heatmap mass on mask pixels; 0 for an all-zero heatmap.
pub fn cam_locality(heat: &[f32], mask: &Mask) -> Result<f64, DiagnosticsError> {
    if heat.len() != mask.width * mask.height {
        return Err(DiagnosticsError::SizeMismatch { heat: heat.len(), width: mask.width, height: mask.height });
    }
    let (mut inside, mut total) = (0.0f64, 0.0f64);
    for (&h, &m) in heat.iter().zip(&mask.bits) {
        total += h as f64;
        if m {
            inside += h as f64;
        }
    }
    Ok(if total > 0.0 { inside / total } else { 0.0 })
}

/// Nearest-neighbour resize of a mask, used when the tile and model input differ.
pub fn resize_mask(mask: &Mask, size: usize) -> Mask {
    let mut out = Mask::square(size);
    for y in 0..size {
        for x in 0..size {
            if mask.get(x * mask.width / size, y * mask.height / size) {
                out.set(x, y);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format {other:?} (csv, markdown)")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub title: String,
    pub config_digest: String,
    pub seed: u64,
    pub notes: Vec<String>,
}

pub fn columns() -> Vec<String> {
    let mut c: Vec<String> = ["scenario", "n", "accuracy", "macro_f1"].map(String::from).to_vec();
    for class in RoadClass::ALL {
        for m in ["precision", "recall", "f1"] {
            c.push(format!("{class}_{m}"));
        }
    }
    c
}

fn values(r: &MetricsRow) -> Vec<f64> {
    let mut v = vec![r.accuracy, r.macro_f1];
    for m in &r.per_class {
        v.extend([m.precision, m.recall, m.f1]);
    }
    v
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

pub fn render_report(rows: &[MetricsRow], format: ReportFormat, meta: &ReportMeta) -> Result<String, DiagnosticsError> {
    if rows.is_empty() {
        return Err(DiagnosticsError::EmptyReport);
    }
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let io = |e: csv::Error| DiagnosticsError::Io { path: "<csv>".into(), source: e.into() };
            w.write_record(columns()).map_err(io)?;
            for r in rows {
                let mut rec = vec![r.scenario.clone(), r.n.to_string()];
                rec.extend(values(r).iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(io)?;
            }
            let bytes = w.into_inner().map_err(|e| DiagnosticsError::Io { path: "<csv>".into(), source: e.into_error() })?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Markdown => {
            let mut s = String::new();
            let _ = writeln!(s, "# {}\n", meta.title);
            let _ = writeln!(s, "- config digest: `{}`", meta.config_digest);
            let _ = writeln!(s, "- seed: {}", meta.seed);
            let _ = writeln!(s, "- F1 is macro-F1, the unweighted mean of per-class F1; accuracy is unweighted.");
            for n in &meta.notes {
                let _ = writeln!(s, "- {n}");
            }
            let cols = columns();
            let _ = writeln!(s, "\n| {} |", cols.join(" | "));
            let align: Vec<&str> = cols.iter().enumerate().map(|(i, _)| if i == 0 { "---" } else { "---:" }).collect();
            let _ = writeln!(s, "| {} |", align.join(" | "));
            for r in rows {
                let mut cells = vec![r.scenario.replace('|', "\\|"), r.n.to_string()];
                cells.extend(values(r).into_iter().map(pct));
                let _ = writeln!(s, "| {} |", cells.join(" | "));
            }
            Ok(s)
        }
    }
}

pub fn emit_report(rows: &[MetricsRow], format: ReportFormat, meta: &ReportMeta, path: &Path) -> Result<(), DiagnosticsError> {
    let text = render_report(rows, format, meta)?;
    std::fs::write(path, text).map_err(|source| DiagnosticsError::Io { path: path.to_path_buf(), source })
}
